/// Serialise a type through its `Display` / `FromStr` text form.
macro_rules! serde_as_text {
    ($t:ty) => {
        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> serde::Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

pub mod campaign;
pub mod classify;
pub mod fingerprint;
pub mod grab;
pub mod net;
pub mod probe;
pub mod report;
pub mod seedprep;
pub mod simnet;
pub mod targetgen;
