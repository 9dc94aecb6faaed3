fn main() -> std::process::ExitCode {
    uista::cli::main()
}
