fn main() -> std::process::ExitCode {
    clausechain::cli::main()
}
