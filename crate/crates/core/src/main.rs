fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CVDSFM_LOG", "warn")).init();
    std::process::exit(priorsfm::cli::run(std::env::args_os()));
}
