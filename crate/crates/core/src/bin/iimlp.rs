fn main() -> std::process::ExitCode {
    iimlp::cli::main_from_env()
}
