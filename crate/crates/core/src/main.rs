fn main() -> std::process::ExitCode {
    oodcert::cli::main()
}
