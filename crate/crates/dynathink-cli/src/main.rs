use clap::Parser;
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();

    let cli = dynathink_cli::Cli::parse();
    let line = dynathink_cli::execute(cli).await?;
    println!("{line}");
    Ok(())
}
