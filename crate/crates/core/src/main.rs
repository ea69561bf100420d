fn main() {
    std::process::exit(hyperrec::cli::run(std::env::args_os()));
}
