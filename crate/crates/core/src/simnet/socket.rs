//! Real TCP listeners in front of simulated Bitcoin-family peers, so the
//! live [`TcpTransport`](crate::transport::TcpTransport) can be exercised
//! end to end.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::serve::BitcoinSession;
use super::{SimError, SimNetwork};
use crate::profile::Family;

/// Listeners on `127.0.0.1`, one per served peer. Dropping the server stops
/// every listener.
pub struct SocketServer {
    /// Local listener address -> simulated endpoint it stands in for.
    pub endpoints: BTreeMap<SocketAddr, SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl SocketServer {
    /// Serves the listed peers (by index) of a Bitcoin-family network.
    pub fn start(net: Arc<SimNetwork>, peers: &[usize]) -> std::io::Result<Self> {
        if net.profile.family != Family::Bitcoin {
            let e = SimError::UnsupportedFamily(net.profile.family);
            return Err(std::io::Error::new(ErrorKind::Unsupported, e.to_string()));
        }
        let stop = Arc::new(AtomicBool::new(false));
        let mut endpoints = BTreeMap::new();
        let mut threads = Vec::new();
        for &index in peers {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            listener.set_nonblocking(true)?;
            endpoints.insert(listener.local_addr()?, net.peers[index].endpoint);
            let (net, stop) = (Arc::clone(&net), Arc::clone(&stop));
            threads.push(std::thread::spawn(move || accept_loop(&net, index, listener, &stop)));
        }
        Ok(SocketServer { endpoints, stop, threads })
    }

    /// Local address standing in for simulated `endpoint`.
    pub fn local_for(&self, endpoint: SocketAddr) -> Option<SocketAddr> {
        self.endpoints.iter().find(|(_, sim)| **sim == endpoint).map(|(local, _)| *local)
    }
}

impl Drop for SocketServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(net: &SimNetwork, index: usize, listener: TcpListener, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, from)) => {
                if net.peers[index].answers() {
                    let _ = serve_connection(net, index, stream, from, stop);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => return,
        }
    }
}

fn serve_connection(
    net: &SimNetwork,
    index: usize,
    mut stream: TcpStream,
    from: SocketAddr,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    let mut session = BitcoinSession::default();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let mut idle = 0;
    // close after ~2 s of silence
    while !stop.load(Ordering::SeqCst) && idle < 40 {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                idle = 0;
                buf.extend_from_slice(&chunk[..n]);
                let reply = net.bitcoin_feed(index, from.ip(), &mut session, &mut buf);
                if !reply.is_empty() {
                    stream.write_all(&reply)?;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => idle += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
