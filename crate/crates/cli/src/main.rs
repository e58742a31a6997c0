fn main() {
    std::process::exit(nlvc_cli::run(std::env::args_os()));
}
