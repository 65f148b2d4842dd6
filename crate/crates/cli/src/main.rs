fn main() {
    std::process::exit(crm_cli::run(std::env::args_os()));
}
