fn main() {
    std::process::exit(fiberfilter::cli::run(std::env::args_os()));
}
