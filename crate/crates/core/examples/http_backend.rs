//! Talks to an OpenAI-compatible server. Set DSM_FORGE_BASE_URL and
//! DSM_FORGE_MODEL, e.g. `http://localhost:11434/v1` and `llama3.3:70b`.

use dsm_forge::gateway::{BackendConfig, HttpBackend, Session};

fn main() {
    let (Ok(url), Ok(model)) = (std::env::var("DSM_FORGE_BASE_URL"), std::env::var("DSM_FORGE_MODEL")) else {
        let cfg = BackendConfig::new("http://localhost:11434/v1", "llama3.3:70b");
        println!("DSM_FORGE_BASE_URL / DSM_FORGE_MODEL not set; a backend config looks like:");
        println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
        return;
    };
    let backend = HttpBackend::new(BackendConfig::new(url, model)).unwrap();
    let mut session = Session::new(&backend, None);
    match session.ask("Name the major components of a power screwdriver as a list of strings.") {
        Ok(r) => println!("{}", r.text),
        Err(e) => eprintln!("request failed: {e}"),
    }
}
