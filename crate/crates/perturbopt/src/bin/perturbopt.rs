fn main() {
    std::process::exit(perturbopt::cli::run(std::env::args_os()));
}
