//! Raw-socket transport for real scans. Needs root or CAP_NET_RAW.

use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol as SockProtocol, Socket, Type};

use super::scan::{Received, Transport, TransportError};

const IPPROTO_RAW: i32 = 255;
const POLL_INTERVAL: Duration = Duration::from_micros(200);

pub struct LiveTransport {
    local: Ipv4Addr,
    sender: Socket,
    receivers: Vec<Socket>,
    opened: Instant,
    buf: Vec<u8>,
    pending: Vec<Received>,
}

fn open_error(e: io::Error) -> TransportError {
    match e.raw_os_error() {
        Some(1) | Some(13) => TransportError::Capability(format!(
            "opening a raw socket was refused ({e}); run as root or grant CAP_NET_RAW"
        )),
        _ => TransportError::Fatal(format!("opening raw socket: {e}")),
    }
}

/// Source address the kernel would pick to reach `probe_dst`.
pub fn route_source(probe_dst: Ipv4Addr) -> io::Result<Ipv4Addr> {
    let sock = UdpSocket::bind("0.0.0.0:0")?;
    sock.connect(SocketAddrV4::new(probe_dst, 53))?;
    match sock.local_addr()? {
        SocketAddr::V4(a) => Ok(*a.ip()),
        SocketAddr::V6(_) => Err(io::Error::other("no IPv4 source address")),
    }
}

impl LiveTransport {
    /// Opens the send and receive sockets. `local` is the source address
    /// written into every probe.
    pub fn open(local: Ipv4Addr) -> Result<Self, TransportError> {
        let sender = Socket::new(
            Domain::IPV4,
            Type::RAW,
            Some(SockProtocol::from(IPPROTO_RAW)),
        )
        .map_err(open_error)?;
        sender.set_header_included_v4(true).map_err(open_error)?;
        let mut receivers = Vec::new();
        for proto in [SockProtocol::ICMPV4, SockProtocol::TCP, SockProtocol::UDP] {
            let s = Socket::new(Domain::IPV4, Type::RAW, Some(proto)).map_err(open_error)?;
            s.set_nonblocking(true).map_err(open_error)?;
            let _ = s.set_recv_buffer_size(8 << 20);
            receivers.push(s);
        }
        Ok(LiveTransport {
            local,
            sender,
            receivers,
            opened: Instant::now(),
            buf: vec![0; 65536],
            pending: Vec::new(),
        })
    }
}

impl Transport for LiveTransport {
    fn local_addr(&self) -> Ipv4Addr {
        self.local
    }

    fn now(&self) -> Duration {
        self.opened.elapsed()
    }

    fn wait_until(&mut self, t: Duration) -> Result<(), TransportError> {
        loop {
            self.poll()?;
            let now = self.now();
            if now >= t {
                return Ok(());
            }
            std::thread::sleep((t - now).min(POLL_INTERVAL));
        }
    }

    fn send(&mut self, dst: Ipv4Addr, packet: &[u8]) -> Result<(), TransportError> {
        let addr = SocketAddr::V4(SocketAddrV4::new(dst, 0));
        match self.sender.send_to(packet, &addr.into()) {
            Ok(_) => Ok(()),
            Err(e) if matches!(e.raw_os_error(), Some(1) | Some(13)) => Err(open_error(e)),
            Err(e) => Err(TransportError::Send(e.to_string())),
        }
    }

    fn drain(&mut self) -> Result<Vec<Received>, TransportError> {
        self.poll()?;
        Ok(std::mem::take(&mut self.pending))
    }
}

impl LiveTransport {
    fn poll(&mut self) -> Result<(), TransportError> {
        for sock in &self.receivers {
            loop {
                match (&*sock).read(&mut self.buf) {
                    Ok(n) => self.pending.push(Received {
                        at: self.opened.elapsed(),
                        bytes: self.buf[..n].to_vec(),
                    }),
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(TransportError::Fatal(format!("receive: {e}"))),
                }
            }
        }
        Ok(())
    }
}
