fn main() {
    env_logger::init();
    let code = dfalign::cli::main_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
