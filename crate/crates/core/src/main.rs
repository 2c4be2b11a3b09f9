fn main() -> std::process::ExitCode {
    trajpose::cli::main()
}
