fn main() {
    std::process::exit(transport_mc::cli::run(std::env::args_os()));
}
