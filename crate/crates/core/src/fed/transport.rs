use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wire::{read_message, write_message, Message};
use super::{ClientData, FedClient, FedConfig, FedServer, FederatedOutcome};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Inproc,
    Tcp,
}

/// Runs FedAvg to completion over the chosen transport.
///
/// The global model is initialized from `cfg.train.rng_seed`, and each
/// client's shuffle stream is derived from the same seed and its id, so the
/// result depends only on `(clients, cfg)`.
pub fn run_federated(
    clients: Vec<ClientData>,
    cfg: &FedConfig,
    transport: Transport,
) -> Result<FederatedOutcome> {
    let first = clients
        .first()
        .ok_or_else(|| Error::Config("federated training needs at least one client".into()))?;
    let cfg = FedConfig {
        expected_clients: clients.len(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let initial = cfg.init_global(first.x.cols())?;
    let server = FedServer::new(cfg.clone(), initial, None)?;
    let fed_clients = clients
        .into_iter()
        .map(|d| {
            let train = cfg.client_train(&d.client_id);
            FedClient::new(d, train, cfg.local_epochs)
        })
        .collect::<Result<Vec<_>>>()?;
    match transport {
        Transport::Inproc => run_inproc(server, fed_clients),
        Transport::Tcp => run_tcp_loopback(server, fed_clients),
    }
}

fn run_inproc(mut server: FedServer, mut clients: Vec<FedClient>) -> Result<FederatedOutcome> {
    for c in &clients {
        if let Message::Register {
            client_id,
            sample_count,
            layout,
        } = c.register_message()
        {
            server.register(&client_id, sample_count, &layout)?;
        }
    }
    while !server.finished() {
        let round = server.round();
        let global = server.global().clone();
        let updates = clients
            .par_iter_mut()
            .map(|c| c.train_round(round, &global))
            .collect::<Result<Vec<_>>>()?;
        for u in updates {
            server.submit(u)?;
        }
    }
    Ok(server.into_outcome())
}

fn run_tcp_loopback(server: FedServer, clients: Vec<FedClient>) -> Result<FederatedOutcome> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::scope(|s| {
        let srv = s.spawn(move || serve(listener, server, &ServeOptions::default()));
        let handles: Vec<_> = clients
            .into_iter()
            .map(|c| {
                s.spawn(move || -> Result<ModelParams> {
                    let stream = connect(addr)?;
                    join(stream, c)
                })
            })
            .collect();
        let outcome = srv
            .join()
            .map_err(|_| Error::Protocol("server thread panicked".into()))?;
        let client_results: Vec<Result<ModelParams>> = handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Protocol("client thread panicked".into())))
            })
            .collect();
        let outcome = outcome?;
        for r in client_results {
            let final_params = r?;
            if final_params != outcome.global {
                return Err(Error::Protocol(
                    "client received a different final model".into(),
                ));
            }
        }
        Ok(outcome)
    })
}

fn connect(addr: SocketAddr) -> Result<TcpStream> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    Ok(stream)
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Give up if registration has not completed within this long.
    pub accept_timeout: Option<Duration>,
    /// Per-read timeout on client sockets.
    pub io_timeout: Option<Duration>,
}

fn accept(listener: &TcpListener, deadline: Option<Instant>) -> Result<TcpStream> {
    let Some(deadline) = deadline else {
        return Ok(listener.accept()?.0);
    };
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                listener.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    listener.set_nonblocking(false)?;
                    return Err(Error::Protocol(
                        "timed out waiting for clients to register".into(),
                    ));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn broadcast_error(conns: &mut [(String, TcpStream)], message: &str) {
    for (_, s) in conns.iter_mut() {
        let _ = write_message(
            s,
            &Message::Error {
                message: message.to_string(),
            },
        );
    }
}

/// Server side of the TCP transport. Returns once every round has been
/// aggregated and `Done` has been sent to all clients.
pub fn serve(
    listener: TcpListener,
    mut server: FedServer,
    opts: &ServeOptions,
) -> Result<FederatedOutcome> {
    let deadline = opts.accept_timeout.map(|t| Instant::now() + t);
    let mut conns: Vec<(String, TcpStream)> = Vec::new();
    while !server.all_registered() {
        let mut stream = match accept(&listener, deadline) {
            Ok(s) => s,
            Err(e) => {
                broadcast_error(&mut conns, &e.to_string());
                return Err(e);
            }
        };
        stream.set_nodelay(true)?;
        stream.set_read_timeout(opts.io_timeout)?;
        let registered = match read_message(&mut stream) {
            Ok(Some(Message::Register {
                client_id,
                sample_count,
                layout,
            })) => server
                .register(&client_id, sample_count, &layout)
                .map(|()| client_id),
            Ok(Some(other)) => Err(Error::Protocol(format!(
                "expected Register, got {:?}",
                other.message_type()
            ))),
            Ok(None) => Err(Error::Protocol(
                "client disconnected before registering".into(),
            )),
            Err(e) => Err(Error::Protocol(format!("registration failed: {e}"))),
        };
        match registered {
            Ok(id) => conns.push((id, stream)),
            Err(e) => {
                let msg = e.to_string();
                let _ = write_message(
                    &mut stream,
                    &Message::Error {
                        message: msg.clone(),
                    },
                );
                broadcast_error(&mut conns, &msg);
                return Err(e);
            }
        }
    }
    conns.sort_by(|a, b| a.0.cmp(&b.0));

    let result = run_rounds(&mut server, &mut conns);
    if let Err(e) = &result {
        broadcast_error(&mut conns, &e.to_string());
    }
    result?;
    let done = Message::Done {
        rounds: server.round(),
        params: server.global().clone(),
    };
    for (id, s) in &mut conns {
        write_message(s, &done)
            .map_err(|e| Error::Protocol(format!("sending Done to `{id}`: {e}")))?;
    }
    Ok(server.into_outcome())
}

fn run_rounds(server: &mut FedServer, conns: &mut [(String, TcpStream)]) -> Result<()> {
    while !server.finished() {
        let round = server.round();
        let msg = Message::ModelBroadcast {
            round,
            params: server.global().clone(),
        };
        for (id, s) in conns.iter_mut() {
            write_message(s, &msg).map_err(|e| {
                Error::Protocol(format!("client `{id}` unreachable in round {round}: {e}"))
            })?;
        }
        for (id, s) in conns.iter_mut() {
            match read_message(s) {
                Ok(Some(Message::Update(u))) if u.client_id == *id => {
                    server.submit(u)?;
                }
                Ok(Some(Message::Update(u))) => {
                    return Err(Error::Protocol(format!(
                        "connection of `{id}` sent an update as `{}`",
                        u.client_id
                    )))
                }
                Ok(Some(Message::Error { message })) => {
                    return Err(Error::Protocol(format!(
                        "client `{id}` failed in round {round}: {message}"
                    )))
                }
                Ok(Some(other)) => {
                    return Err(Error::Protocol(format!(
                        "client `{id}` sent {:?} in round {round}",
                        other.message_type()
                    )))
                }
                Ok(None) => {
                    return Err(Error::Protocol(format!(
                        "client `{id}` disconnected during round {round}"
                    )))
                }
                Err(e) => {
                    return Err(Error::Protocol(format!(
                        "client `{id}` in round {round}: {e}"
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Client side of the TCP transport. Returns the final global model.
pub fn join(mut stream: TcpStream, mut client: FedClient) -> Result<ModelParams> {
    write_message(&mut stream, &client.register_message())?;
    loop {
        match read_message(&mut stream)? {
            Some(Message::ModelBroadcast { round, params }) => {
                match client.train_round(round, &params) {
                    Ok(update) => write_message(&mut stream, &Message::Update(update))?,
                    Err(e) => {
                        let _ = write_message(
                            &mut stream,
                            &Message::Error {
                                message: e.to_string(),
                            },
                        );
                        return Err(e);
                    }
                }
            }
            Some(Message::Done { params, .. }) => return Ok(params),
            Some(Message::Error { message }) => {
                return Err(Error::Protocol(format!(
                    "server rejected `{}`: {message}",
                    client.id()
                )))
            }
            Some(other) => {
                return Err(Error::Protocol(format!(
                    "unexpected {:?} from server",
                    other.message_type()
                )))
            }
            None => return Err(Error::Protocol("server closed the connection".into())),
        }
    }
}
