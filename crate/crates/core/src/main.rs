fn main() {
    std::process::exit(agmrf::cli::run(std::env::args_os()));
}
