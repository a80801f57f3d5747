fn main() {
    std::process::exit(topohaz_cli::run(std::env::args_os()));
}
