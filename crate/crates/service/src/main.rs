use std::process::ExitCode;

use mmsvae_service::{bind, run, AppState, ServiceConfig, ServiceError};

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = async {
        let config = ServiceConfig::from_env()?;
        let state = AppState::load(config.clone())?;
        let listener = bind(config.port).await?;
        run(listener, state).await
    };
    match result.await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ServiceError::Bind { .. } | ServiceError::Serve(_) => 4,
                _ => 2,
            })
        }
    }
}
