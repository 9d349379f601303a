fn main() {
    env_logger::init();
    std::process::exit(fgn_cli::run(std::env::args_os()));
}
