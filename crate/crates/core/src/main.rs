fn main() {
    std::process::exit(scoring_lm::cli::run_command(std::env::args_os()));
}
