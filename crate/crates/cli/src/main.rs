fn main() {
    singlq_cli::init_logging();
    let code = singlq_cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
