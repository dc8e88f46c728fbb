fn main() -> std::process::ExitCode {
    ramanseg::cli::main_with_args(std::env::args_os())
}
