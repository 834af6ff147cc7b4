fn main() {
    std::process::exit(audit_cli::run(std::env::args_os()));
}
