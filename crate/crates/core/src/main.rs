fn main() {
    std::process::exit(rankflow::cli::run(std::env::args_os()));
}
