fn main() {
    std::process::exit(pd_term::cli::run(std::env::args_os()));
}
