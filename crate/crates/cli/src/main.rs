fn main() {
    std::process::exit(heatsource_cli::run(std::env::args_os()));
}
