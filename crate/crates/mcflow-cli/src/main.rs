fn main() {
    eprintln!("mcflow: command-line interface not wired up yet");
    std::process::exit(2);
}
