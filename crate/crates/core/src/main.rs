fn main() -> std::process::ExitCode {
    seqdiv::cli::main()
}
