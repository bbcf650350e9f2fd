fn main() {
    std::process::exit(rankscope::cli::run(std::env::args_os()));
}
