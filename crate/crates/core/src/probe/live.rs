//! Raw-socket ICMPv6 transport (Linux). Needs `CAP_NET_RAW`.

use std::io;
use std::mem::{size_of, zeroed};
use std::net::Ipv6Addr;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::time::{Duration, Instant};

use super::{RawInbound, Transport, TransportError};

pub struct RawIcmpv6Transport {
    fd: OwnedFd,
    opened: Instant,
}

fn check(ret: libc::c_int) -> io::Result<libc::c_int> {
    if ret < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(ret)
    }
}

fn set_int(fd: libc::c_int, level: libc::c_int, name: libc::c_int, value: libc::c_int) -> io::Result<()> {
    // SAFETY: `value` outlives the call and the length matches its type.
    check(unsafe {
        libc::setsockopt(
            fd,
            level,
            name,
            &value as *const _ as *const libc::c_void,
            size_of::<libc::c_int>() as libc::socklen_t,
        )
    })
    .map(|_| ())
}

impl RawIcmpv6Transport {
    pub fn open() -> io::Result<Self> {
        // SAFETY: plain socket(2) call; ownership is taken immediately.
        let raw = check(unsafe {
            libc::socket(
                libc::AF_INET6,
                libc::SOCK_RAW | libc::SOCK_NONBLOCK | libc::SOCK_CLOEXEC,
                libc::IPPROTO_ICMPV6,
            )
        })?;
        // SAFETY: `raw` is a fresh descriptor owned by no one else.
        let fd = unsafe { OwnedFd::from_raw_fd(raw) };
        set_int(raw, libc::IPPROTO_IPV6, libc::IPV6_RECVHOPLIMIT, 1)?;
        set_int(raw, libc::SOL_SOCKET, libc::SO_RCVBUF, 8 << 20)?;
        Ok(Self {
            fd,
            opened: Instant::now(),
        })
    }

    fn recv_one(&self) -> io::Result<Option<RawInbound>> {
        let fd = self.fd.as_raw_fd();
        let mut buf = [0u8; 2048];
        let mut cmsg = [0u8; 64];
        // SAFETY: zeroed sockaddr_in6/msghdr are valid initial states.
        let mut from: libc::sockaddr_in6 = unsafe { zeroed() };
        let mut iov = libc::iovec {
            iov_base: buf.as_mut_ptr() as *mut libc::c_void,
            iov_len: buf.len(),
        };
        let mut msg: libc::msghdr = unsafe { zeroed() };
        msg.msg_name = &mut from as *mut _ as *mut libc::c_void;
        msg.msg_namelen = size_of::<libc::sockaddr_in6>() as libc::socklen_t;
        msg.msg_iov = &mut iov;
        msg.msg_iovlen = 1;
        msg.msg_control = cmsg.as_mut_ptr() as *mut libc::c_void;
        msg.msg_controllen = cmsg.len() as _;
        // SAFETY: every pointer in `msg` refers to live stack buffers.
        let n = unsafe { libc::recvmsg(fd, &mut msg, 0) };
        if n < 0 {
            let err = io::Error::last_os_error();
            return if err.kind() == io::ErrorKind::WouldBlock {
                Ok(None)
            } else {
                Err(err)
            };
        }
        let mut hop_limit = 0u8;
        // SAFETY: CMSG_* walk the control buffer filled in by the kernel.
        unsafe {
            let mut c = libc::CMSG_FIRSTHDR(&msg);
            while !c.is_null() {
                if (*c).cmsg_level == libc::IPPROTO_IPV6 && (*c).cmsg_type == libc::IPV6_HOPLIMIT {
                    hop_limit = *(libc::CMSG_DATA(c) as *const libc::c_int) as u8;
                }
                c = libc::CMSG_NXTHDR(&msg, c);
            }
        }
        Ok(Some(RawInbound {
            source: Ipv6Addr::from(from.sin6_addr.s6_addr),
            hop_limit,
            message: buf[..n as usize].to_vec(),
            timestamp_us: Some(self.opened.elapsed().as_micros() as u64),
        }))
    }
}

impl Transport for RawIcmpv6Transport {
    fn send(&self, destination: Ipv6Addr, hop_limit: u8, message: &[u8]) -> Result<(), TransportError> {
        let fd = self.fd.as_raw_fd();
        set_int(fd, libc::IPPROTO_IPV6, libc::IPV6_UNICAST_HOPS, hop_limit as libc::c_int)?;
        // SAFETY: zeroed sockaddr_in6 is valid; fields set below.
        let mut to: libc::sockaddr_in6 = unsafe { zeroed() };
        to.sin6_family = libc::AF_INET6 as libc::sa_family_t;
        to.sin6_addr.s6_addr = destination.octets();
        loop {
            // SAFETY: `message` and `to` are valid for the duration of the call.
            let ret = unsafe {
                libc::sendto(
                    fd,
                    message.as_ptr() as *const libc::c_void,
                    message.len(),
                    0,
                    &to as *const _ as *const libc::sockaddr,
                    size_of::<libc::sockaddr_in6>() as libc::socklen_t,
                )
            };
            if ret >= 0 {
                return Ok(());
            }
            let err = io::Error::last_os_error();
            if err.kind() != io::ErrorKind::WouldBlock {
                return Err(err.into());
            }
            std::thread::sleep(Duration::from_micros(50));
        }
    }

    fn poll(&self, wait: Duration) -> Result<Vec<RawInbound>, TransportError> {
        let mut pfd = libc::pollfd {
            fd: self.fd.as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        };
        // SAFETY: single valid pollfd.
        check(unsafe { libc::poll(&mut pfd, 1, wait.as_millis() as libc::c_int) })?;
        let mut out = Vec::new();
        while let Some(ev) = self.recv_one()? {
            out.push(ev);
            if out.len() >= 4096 {
                break;
            }
        }
        Ok(out)
    }
}
