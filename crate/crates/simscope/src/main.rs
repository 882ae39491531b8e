fn main() {
    std::process::exit(simscope::cli::main_with_args(std::env::args().collect()));
}
