fn main() -> std::process::ExitCode {
    hiant::cli::main()
}
