fn main() {
    std::process::exit(evfusion_cli::run(std::env::args_os()));
}
