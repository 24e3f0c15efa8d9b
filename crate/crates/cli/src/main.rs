fn main() -> std::process::ExitCode {
    softts::commands::main_with(std::env::args_os())
}
