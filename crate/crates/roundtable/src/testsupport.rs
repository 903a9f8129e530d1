//! Test doubles shared by unit and integration tests.

#[doc(hidden)]
pub mod stub {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
    use std::sync::Arc;
    use std::thread::JoinHandle;

    type Handler = Box<dyn Fn(u64, &str) -> (u16, String) + Send + Sync>;

    /// A minimal single-threaded HTTP server for exercising the HTTP
    /// backends without a network. Each request gets `Connection: close`.
    pub struct StubServer {
        addr: std::net::SocketAddr,
        calls: Arc<AtomicU64>,
        shutdown: Arc<AtomicBool>,
        handle: Option<JoinHandle<()>>,
    }

    impl StubServer {
        pub fn with_handler(
            handler: impl Fn(u64, &str) -> (u16, String) + Send + Sync + 'static,
        ) -> StubServer {
            let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
            let addr = listener.local_addr().expect("local addr");
            let calls = Arc::new(AtomicU64::new(0));
            let shutdown = Arc::new(AtomicBool::new(false));
            let handler: Handler = Box::new(handler);

            let thread_calls = calls.clone();
            let thread_shutdown = shutdown.clone();
            let handle = std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if thread_shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let idx = thread_calls.fetch_add(1, Ordering::SeqCst);
                    let _ = serve_one(stream, idx, &handler);
                }
            });

            StubServer {
                addr,
                calls,
                shutdown,
                handle: Some(handle),
            }
        }

        /// Serve the given JSON bodies in request order, repeating the last
        /// one once the list is exhausted.
        pub fn chat_completions(bodies: Vec<serde_json::Value>) -> StubServer {
            assert!(!bodies.is_empty());
            StubServer::with_handler(move |idx, _| {
                let body = &bodies[(idx as usize).min(bodies.len() - 1)];
                (200, body.to_string())
            })
        }

        /// Always answer with the given status code.
        pub fn status(code: u16, _times: u64) -> StubServer {
            StubServer::with_handler(move |_, _| (code, "{}".to_string()))
        }

        pub fn url(&self) -> String {
            format!("http://{}", self.addr)
        }

        pub fn calls(&self) -> u64 {
            self.calls.load(Ordering::SeqCst)
        }

        pub fn finish(mut self) {
            self.stop();
        }

        fn stop(&mut self) {
            self.shutdown.store(true, Ordering::SeqCst);
            // Wake the accept loop.
            let _ = TcpStream::connect(self.addr);
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        }
    }

    impl Drop for StubServer {
        fn drop(&mut self) {
            if self.handle.is_some() {
                self.stop();
            }
        }
    }

    fn serve_one(stream: TcpStream, idx: u64, handler: &Handler) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut line = String::new();
        let mut content_length = 0usize;
        reader.read_line(&mut line)?; // request line
        loop {
            let mut header = String::new();
            reader.read_line(&mut header)?;
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some(rest) = header
                .to_ascii_lowercase()
                .strip_prefix("content-length:")
                .map(str::trim)
                .map(str::to_string)
            {
                content_length = rest.parse().unwrap_or(0);
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let body = String::from_utf8_lossy(&body).to_string();

        let (status, response_body) = handler(idx, &body);
        let reason = if status == 200 { "OK" } else { "Error" };
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
            response_body.len()
        )?;
        stream.flush()
    }
}
