//! Greeting-line parsers for volunteer-first protocols and NTP.

/// What a banner parser extracted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    /// A recognised greeting; the string summarises it.
    Valid(String),
    /// Bytes arrived but do not look like this protocol.
    Invalid(String),
    /// No parser for this service; any bytes count.
    Opaque,
}

fn first_line(b: &[u8]) -> String {
    let end = b.iter().position(|&c| c == b'\n').unwrap_or(b.len());
    String::from_utf8_lossy(&b[..end]).trim_end_matches('\r').to_string()
}

/// Whether a volunteered banner is complete enough to stop reading.
pub fn greeting_complete(service: &str, b: &[u8]) -> bool {
    match service {
        "ftp" | "smtp" | "pop3" | "imap" | "ssh" => b.contains(&b'\n'),
        _ => false,
    }
}

fn reply_code_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 3 && b[..3].iter().all(u8::is_ascii_digit) && b.get(3).is_none_or(|c| *c == b' ' || *c == b'-')
}

pub fn parse_greeting(service: &str, b: &[u8]) -> Parsed {
    let line = first_line(b);
    let ok = match service {
        "ftp" | "smtp" => reply_code_line(&line),
        "pop3" => line.starts_with("+OK"),
        "imap" => line.starts_with("* OK") || line.starts_with("* PREAUTH"),
        "ssh" => line.starts_with("SSH-"),
        "telnet" => return parse_telnet(b),
        _ => return Parsed::Opaque,
    };
    if ok {
        Parsed::Valid(line)
    } else {
        Parsed::Invalid(format!("unexpected {service} greeting"))
    }
}

const IAC: u8 = 255;
const SB: u8 = 250;
const SE: u8 = 240;

/// Split a Telnet stream into negotiation commands and printable text.
pub fn parse_telnet(b: &[u8]) -> Parsed {
    let mut opts = Vec::new();
    let mut text = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] != IAC {
            text.push(b[i]);
            i += 1;
            continue;
        }
        match b.get(i + 1) {
            Some(&cmd @ 251..=254) => {
                let verb = ["WILL", "WONT", "DO", "DONT"][(cmd - 251) as usize];
                if let Some(opt) = b.get(i + 2) {
                    opts.push(format!("{verb} {opt}"));
                }
                i += 3;
            }
            Some(&SB) => {
                let end = b[i..].windows(2).position(|w| w == [IAC, SE]).map_or(b.len(), |p| i + p + 2);
                opts.push(format!("SB {}", b.get(i + 2).copied().unwrap_or(0)));
                i = end;
            }
            Some(&IAC) => {
                text.push(IAC);
                i += 2;
            }
            Some(_) => i += 2,
            None => i += 1,
        }
    }
    if opts.is_empty() && text.is_empty() {
        return Parsed::Invalid("empty telnet stream".into());
    }
    let text = String::from_utf8_lossy(&text);
    Parsed::Valid(format!("options=[{}] text={:?}", opts.join(","), text.trim()))
}

pub const NTP_PACKET_LEN: usize = 48;

/// Mode-3 (client) request, version 4.
pub fn ntp_request() -> Vec<u8> {
    let mut p = vec![0u8; NTP_PACKET_LEN];
    p[0] = (4 << 3) | 3;
    p
}

pub fn parse_ntp(b: &[u8]) -> Parsed {
    if b.len() < NTP_PACKET_LEN {
        return Parsed::Invalid("short NTP packet".into());
    }
    let (version, mode, stratum) = ((b[0] >> 3) & 7, b[0] & 7, b[1]);
    if mode != 4 {
        return Parsed::Invalid(format!("NTP mode {mode}"));
    }
    let refid = if stratum <= 1 {
        String::from_utf8_lossy(&b[12..16]).trim_end_matches('\0').to_string()
    } else {
        format!("{}.{}.{}.{}", b[12], b[13], b[14], b[15])
    };
    Parsed::Valid(format!("version={version} stratum={stratum} refid={refid}"))
}
