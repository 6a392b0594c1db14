fn main() -> std::process::ExitCode {
    let code = sibling_collector::cli::run(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}
