fn main() {
    std::process::exit(trafficgan::cli::main_with_args(std::env::args_os()));
}
