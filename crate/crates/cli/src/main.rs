fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BLACKBOX_LDS_LOG", "warn")).init();
    std::process::exit(blackbox_lds_cli::main_with(std::env::args_os()));
}
