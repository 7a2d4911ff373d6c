fn main() -> std::process::ExitCode {
    memscore_cli::run(std::env::args_os())
}
