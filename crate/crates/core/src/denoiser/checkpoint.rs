//! Parameter files: an ASCII header followed by raw little-endian `f64`s.
//!
//! ```text
//! RGBDNET1
//! config {"resolution":16,...}
//! tensor time.weight 32x32 0 1024
//! ...
//! end
//! <payload>
//! ```

use std::fs;
use std::path::Path;

use super::net::{layout, TinyNet, TinyNetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGBDNET1";

pub fn encode_checkpoint(net: &TinyNet) -> Vec<u8> {
    let mut head = String::from("RGBDNET1\n");
    head.push_str("config ");
    head.push_str(&serde_json::to_string(net.config()).expect("config serializes"));
    head.push('\n');
    for e in net.param_entries() {
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        head.push_str(&format!("tensor {} {} {} {}\n", e.name, dims.join("x"), e.offset, e.len()));
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    out.reserve(net.num_params() * 8);
    for v in net.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedFile(msg.into())
}

/// Splits off the next `\n`-terminated line.
fn next_line<'a>(bytes: &mut &'a [u8]) -> Result<&'a str> {
    let end = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| malformed("unterminated header line"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not UTF-8"))?;
    *bytes = &bytes[end + 1..];
    Ok(line)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TinyNet> {
    let mut rest = bytes;
    if next_line(&mut rest).ok() != Some("RGBDNET1") {
        return Err(malformed("bad checkpoint magic"));
    }
    let cfg_line = next_line(&mut rest)?;
    let json = cfg_line.strip_prefix("config ").ok_or_else(|| malformed("missing config line"))?;
    let config: TinyNetConfig =
        serde_json::from_str(json).map_err(|e| malformed(format!("bad config: {e}")))?;
    config.validate().map_err(|e| malformed(format!("bad config: {e}")))?;

    let expected = layout(&config);
    for e in &expected {
        let line = next_line(&mut rest)?;
        let fields: Vec<&str> = line.split(' ').collect();
        let [tag, name, dims, offset, len] = fields[..] else {
            return Err(malformed(format!("bad tensor line {line:?}")));
        };
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(format!("bad shape in {line:?}")))?;
        let ok = tag == "tensor"
            && name == e.name
            && dims == e.shape
            && offset.parse::<usize>().ok() == Some(e.offset)
            && len.parse::<usize>().ok() == Some(e.len());
        if !ok {
            return Err(malformed(format!("tensor line {line:?} does not match the architecture")));
        }
    }
    if next_line(&mut rest)? != "end" {
        return Err(malformed("missing end of header"));
    }

    let total = expected.last().map_or(0, |e| e.offset + e.len());
    if rest.len() != total * 8 {
        return Err(malformed(format!("payload has {} bytes, expected {}", rest.len(), total * 8)));
    }
    let params: Vec<f64> =
        rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    TinyNet::from_params(config, params).map_err(|e| malformed(e.to_string()))
}

pub fn write_checkpoint(net: &TinyNet, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TinyNet> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> TinyNet {
        TinyNet::random(TinyNetConfig { resolution: 8, base_channels: 4, mid_channels: 4, time_dim: 4, ..Default::default() }, 3)
            .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let n = net();
        let bytes = encode_checkpoint(&n);
        assert!(bytes.starts_with(CHECKPOINT_MAGIC));
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), n.config());
        assert!(back.params().iter().zip(n.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn header_lists_every_tensor() {
        let n = net();
        let bytes = encode_checkpoint(&n);
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("\ntensor time.weight 4x4 0 16\n"));
        assert!(text.contains("\ntensor conv_in.weight 4x8x3x3 20 288\n"));
        assert_eq!(text.matches("\ntensor ").count(), n.param_entries().len());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&net());
        for cut in (0..bytes.len()).step_by(37) {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::MalformedFile(_))), "cut {cut}");
        }
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let bytes = encode_checkpoint(&net());
        let text = String::from_utf8_lossy(&bytes).into_owned();
        for (from, to) in [("RGBDNET1", "RGBDNET2"), ("conv_in.weight", "conv_in.weighs"), ("4x8x3x3", "4x8x3x4")] {
            let bad = text.replacen(from, to, 1);
            assert!(decode_checkpoint(bad.as_bytes()).is_err(), "{from}");
        }
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&nan).is_err());
    }

    #[test]
    fn huge_declared_config_does_not_allocate() {
        let bad = b"RGBDNET1\nconfig {\"resolution\":512,\"data_channels\":512,\"base_channels\":512,\"mid_channels\":512,\"time_dim\":1024,\"norm_eps\":1e-5}\nend\n";
        assert!(decode_checkpoint(bad).is_err());
    }
}
