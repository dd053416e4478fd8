fn main() -> std::process::ExitCode {
    auralabel::cli::main()
}
