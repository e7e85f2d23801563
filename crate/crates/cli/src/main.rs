fn main() {
    std::process::exit(gedi_cli::run(std::env::args_os()));
}
