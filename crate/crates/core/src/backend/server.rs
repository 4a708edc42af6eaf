//! Serves any [`DenoiserBackend`] over wire protocol v1.

use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{
    stack_rows, unstack_images, ErrorBody, FeaturesRequest, FeaturesResponse, HealthResponse,
    ImageBody, LatentBody, ScheduleRequest, TextEmbedRequest, TextEmbedResponse, WireDenoise,
    WireTensor,
};
use super::{BackendError, DenoiserBackend, ErrorCode, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct ServerOptions {
    /// Requests beyond this many concurrently executing ones get 503.
    pub max_in_flight: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { max_in_flight: 16 }
    }
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (e.g. `127.0.0.1:0`) and serves `backend` on a background
/// thread, one handler thread per admitted request.
pub fn serve(
    backend: Arc<dyn DenoiserBackend>,
    addr: &str,
    opts: ServerOptions,
) -> std::io::Result<ServerHandle> {
    let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let in_flight = Arc::new(AtomicUsize::new(0));
    let acceptor = {
        let server = server.clone();
        std::thread::spawn(move || {
            for req in server.incoming_requests() {
                if in_flight.fetch_add(1, Ordering::SeqCst) >= opts.max_in_flight {
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                    let err = BackendError::rejected(ErrorCode::Overloaded, "too many requests in flight");
                    let _ = req.respond(error_response(&err));
                    continue;
                }
                let backend = backend.clone();
                let in_flight = in_flight.clone();
                std::thread::spawn(move || {
                    handle(backend.as_ref(), req);
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        })
    };
    Ok(ServerHandle {
        addr: bound,
        server,
        acceptor: Some(acceptor),
    })
}

type Reply = Response<std::io::Cursor<Vec<u8>>>;

fn json_response(status: u16, body: &impl Serialize) -> Reply {
    let bytes = serde_json::to_vec(body).expect("response bodies serialize");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error_response(err: &BackendError) -> Reply {
    let code = err.code();
    json_response(
        code.http_status(),
        &ErrorBody {
            code,
            message: err.to_string(),
        },
    )
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, BackendError> {
    serde_json::from_slice(body)
        .map_err(|e| BackendError::rejected(ErrorCode::InvalidRequest, format!("malformed body: {e}")))
}

fn image_tensor(w: &WireTensor) -> Result<image::RgbImage, BackendError> {
    let t = w.decode()?;
    if t.data.iter().any(|v| !(0.0..=255.0).contains(v)) {
        return Err(BackendError::rejected(ErrorCode::InvalidRequest, "image values outside [0, 255]"));
    }
    t.to_rgb()
}

fn ok<T: Serialize>(v: &T) -> Result<Reply, BackendError> {
    Ok(json_response(200, v))
}

fn route(backend: &dyn DenoiserBackend, method: &Method, path: &str, body: &[u8]) -> Result<Reply, BackendError> {
    match (method, path) {
        (Method::Get, "/v1/health") => ok(&HealthResponse { status: "ok".into() }),
        (Method::Get, "/v1/info") => ok(&backend.info()?),
        (Method::Post, "/v1/schedule") => {
            let r: ScheduleRequest = parse(body)?;
            ok(&backend.schedule(r.num_steps)?)
        }
        (Method::Post, "/v1/encode") => {
            let r: ImageBody = parse(body)?;
            let latent = backend.encode(&image_tensor(&r.image)?)?;
            ok(&LatentBody { latent: WireTensor::encode(&Tensor::from_latent(&latent)) })
        }
        (Method::Post, "/v1/decode") => {
            let r: LatentBody = parse(body)?;
            let img = backend.decode(&r.latent.decode()?.into_latent()?)?;
            ok(&ImageBody { image: WireTensor::encode(&Tensor::from_rgb(&img)) })
        }
        (Method::Post, "/v1/text_embed") => {
            let r: TextEmbedRequest = parse(body)?;
            ok(&TextEmbedResponse { embed_id: backend.text_embed(&r.prompt, &r.negative)? })
        }
        (Method::Post, "/v1/denoise") => {
            let r: WireDenoise = parse(body)?;
            let latent = backend.denoise(&r.into_request()?)?;
            ok(&LatentBody { latent: WireTensor::encode(&Tensor::from_latent(&latent)) })
        }
        (Method::Post, "/v1/features") => {
            let r: FeaturesRequest = parse(body)?;
            let images = unstack_images(&r.images.decode()?)?;
            let rows = backend.features(&images)?;
            ok(&FeaturesResponse { features: WireTensor::encode(&stack_rows(&rows)?) })
        }
        _ => Err(BackendError::rejected(
            ErrorCode::NotFound,
            format!("no route for {method} {path}"),
        )),
    }
}

fn handle(backend: &dyn DenoiserBackend, mut req: Request) {
    let mut body = Vec::new();
    let reply = match req.as_reader().read_to_end(&mut body) {
        Err(e) => error_response(&BackendError::rejected(ErrorCode::InvalidRequest, e.to_string())),
        Ok(_) => {
            let path = req.url().split('?').next().unwrap_or_default().to_string();
            let method = req.method().clone();
            match catch_unwind(AssertUnwindSafe(|| route(backend, &method, &path, &body))) {
                Ok(Ok(r)) => r,
                Ok(Err(e)) => error_response(&e),
                Err(_) => error_response(&BackendError::rejected(ErrorCode::Internal, "handler panicked")),
            }
        }
    };
    if let Err(e) = req.respond(reply) {
        log::warn!("failed to send response: {e}");
    }
}
