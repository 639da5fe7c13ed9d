fn main() {
    let outcome = boxdistill::cli::run(std::env::args());
    if !outcome.summary.is_empty() {
        if outcome.exit_code == 0 {
            println!("{}", outcome.summary);
        } else {
            eprintln!("{}", outcome.summary);
        }
    }
    std::process::exit(outcome.exit_code);
}
