fn main() -> std::process::ExitCode {
    graphite::cli::main()
}
