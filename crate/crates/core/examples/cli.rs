//! The command line driven from code: the BAS line of a results table.
//!
//!     cargo run --example cli -- evaluate --bg 73 --bt 100 --ba 53

fn main() {
    let mut argv: Vec<String> = std::env::args().collect();
    if argv.len() == 1 {
        argv.extend(["evaluate", "--bg", "73", "--bt", "100", "--ba", "53"].map(String::from));
    }
    std::process::exit(dance2midi::pipeline::cli::run(argv));
}
