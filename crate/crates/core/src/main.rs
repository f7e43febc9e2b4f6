fn main() -> std::process::ExitCode {
    taskforge::cli::main()
}
