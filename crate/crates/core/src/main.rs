fn main() {
    std::process::exit(dance2midi::pipeline::cli::run(std::env::args_os()));
}
