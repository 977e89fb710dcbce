fn main() {
    std::process::exit(dbt_core::cli::run(std::env::args_os()));
}
