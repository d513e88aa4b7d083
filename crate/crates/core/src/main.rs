fn main() {
    std::process::exit(prosumer_opt::cli::main_with_args(std::env::args_os()));
}
