//! Self-contained text checkpoints.
//!
//! Layout, one record per line, whitespace-separated fields:
//!
//! ```text
//! hyperrec-checkpoint 1
//! dim <d>
//! curvature <c>
//! space <hyperbolic|euclidean>
//! aggregation <attention|average>
//! users <n>
//! items <n>
//! entities <n>
//! relations <n>
//! config <line count>
//! <effective training config, flat key = value lines>
//! ids user|item|entity|relation <count>
//! <original ids, one line, dense order>
//! train <user count>
//! <one line per user: dense training item ids>
//! table user|entity|relation <rows>
//! <one line per row: d coordinates>
//! beta <items>
//! <one line: item logits>
//! end
//! ```
//!
//! Reals are written in shortest round-trip form, so save → load is bit-exact.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::TrainingConfig;
use crate::data::IdMap;
use crate::error::{Error, Result};
use crate::model::{EmbeddingTable, ModelParameters, Space, Aggregation, Table};
use crate::scalar::Scalar;

const MAGIC: &str = "hyperrec-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParameters<T>,
    pub config: TrainingConfig,
    pub users: IdMap,
    pub items: IdMap,
    pub entities: IdMap,
    pub relations: IdMap,
    /// Dense training items per user, excluded when recommending.
    pub train: Vec<Vec<usize>>,
}

fn fmt_real<T: Scalar>(x: T) -> String {
    format!("{:?}", x.as_f64())
}

fn join<I: IntoIterator<Item = String>>(it: I) -> String {
    it.into_iter().collect::<Vec<_>>().join(" ")
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Hyperbolic => "hyperbolic",
        Space::Euclidean => "euclidean",
    }
}

fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Attention => "attention",
        Aggregation::Average => "average",
    }
}

fn table_name(t: Table) -> &'static str {
    match t {
        Table::User => "user",
        Table::Entity => "entity",
        Table::Relation => "relation",
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn validate(&self) -> Result<()> {
        let s = self.params.shape();
        let checks = [
            (self.users.len(), s.users, "user ids"),
            (self.items.len(), s.items, "item ids"),
            (self.entities.len(), s.entities, "entity ids"),
            (self.relations.len(), s.relations, "relation ids"),
            (self.train.len(), s.users, "training sets"),
            (self.params.beta.len(), s.items, "beta logits"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(Error::Checkpoint(format!("{what}: {got} entries, expected {want}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let s = p.shape();
        let mut out = String::new();
        let mut line = |l: String| {
            out.push_str(&l);
            out.push('\n');
        };
        line(MAGIC.into());
        line(format!("dim {}", s.dim));
        line(format!("curvature {}", fmt_real(p.curvature)));
        line(format!("space {}", space_name(p.space)));
        line(format!("aggregation {}", aggregation_name(p.aggregation)));
        line(format!("users {}", s.users));
        line(format!("items {}", s.items));
        line(format!("entities {}", s.entities));
        line(format!("relations {}", s.relations));
        let cfg = self.config.to_text();
        let cfg_lines: Vec<&str> = cfg.lines().collect();
        line(format!("config {}", cfg_lines.len()));
        for l in cfg_lines {
            line(l.to_string());
        }
        for (name, map) in [
            ("user", &self.users),
            ("item", &self.items),
            ("entity", &self.entities),
            ("relation", &self.relations),
        ] {
            line(format!("ids {name} {}", map.len()));
            line(join(map.originals().iter().map(|o| o.to_string())));
        }
        line(format!("train {}", self.train.len()));
        for items in &self.train {
            line(join(items.iter().map(|v| v.to_string())));
        }
        for t in Table::ALL {
            let table = p.table(t);
            line(format!("table {} {}", table_name(t), table.rows()));
            for r in 0..table.rows() {
                line(join(table.row(r).iter().map(|&x| fmt_real(x))));
            }
        }
        line(format!("beta {}", p.beta.len()));
        line(join(p.beta.iter().map(|&x| fmt_real(x))));
        line("end".into());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines(),
            line: 0,
        };
        if r.next()? != MAGIC {
            return Err(Error::Checkpoint("missing header".into()));
        }
        let dim: usize = r.keyed("dim")?;
        let curvature: f64 = r.keyed("curvature")?;
        let space = match r.keyed::<String>("space")?.as_str() {
            "hyperbolic" => Space::Hyperbolic,
            "euclidean" => Space::Euclidean,
            other => return Err(r.err(format!("unknown space `{other}`"))),
        };
        let aggregation = match r.keyed::<String>("aggregation")?.as_str() {
            "attention" => Aggregation::Attention,
            "average" => Aggregation::Average,
            other => return Err(r.err(format!("unknown aggregation `{other}`"))),
        };
        let n_users: usize = r.keyed("users")?;
        let n_items: usize = r.keyed("items")?;
        let n_entities: usize = r.keyed("entities")?;
        let n_relations: usize = r.keyed("relations")?;
        let n_cfg: usize = r.keyed("config")?;
        let mut cfg_text = String::new();
        for _ in 0..n_cfg {
            cfg_text.push_str(r.next()?);
            cfg_text.push('\n');
        }
        let config = TrainingConfig::parse(&cfg_text)?;
        let mut maps = Vec::new();
        for name in ["user", "item", "entity", "relation"] {
            let n: usize = r.keyed(&format!("ids {name}"))?;
            let ids: Vec<u64> = r.values()?;
            if ids.len() != n {
                return Err(r.err(format!("expected {n} {name} ids")));
            }
            maps.push(IdMap::from_originals(ids));
        }
        let n_train: usize = r.keyed("train")?;
        let mut train = Vec::with_capacity(n_train);
        for _ in 0..n_train {
            train.push(r.values::<usize>()?);
        }
        let mut tables = Vec::new();
        for (t, rows) in Table::ALL.into_iter().zip([n_users, n_entities, n_relations]) {
            let n: usize = r.keyed(&format!("table {}", table_name(t)))?;
            if n != rows {
                return Err(r.err(format!("table {} has {n} rows, header says {rows}", table_name(t))));
            }
            let mut data = Vec::with_capacity(rows * dim);
            for _ in 0..rows {
                let row: Vec<f64> = r.values()?;
                if row.len() != dim {
                    return Err(r.err(format!("row has {} values, expected {dim}", row.len())));
                }
                data.extend(row.into_iter().map(T::lit));
            }
            tables.push(EmbeddingTable::from_data(dim, data)?);
        }
        let n_beta: usize = r.keyed("beta")?;
        let beta: Vec<T> = r.values::<f64>()?.into_iter().map(T::lit).collect();
        if beta.len() != n_beta {
            return Err(r.err("beta length mismatch".into()));
        }
        if r.next()? != "end" {
            return Err(r.err("missing end marker".into()));
        }
        let relations = tables.pop().unwrap();
        let entities = tables.pop().unwrap();
        let users = tables.pop().unwrap();
        let mut maps = maps.into_iter();
        let ck = Checkpoint {
            params: ModelParameters {
                curvature: T::lit(curvature),
                space,
                aggregation,
                n_items,
                users,
                entities,
                relations,
                beta,
            },
            config,
            users: maps.next().unwrap(),
            items: maps.next().unwrap(),
            entities: maps.next().unwrap(),
            relations: maps.next().unwrap(),
            train,
        };
        ck.validate()?;
        Ok(ck)
    }
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn keyed<V: FromStr>(&mut self, key: &str) -> Result<V> {
        let l = self.next()?;
        let rest = l
            .strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key}`")))?;
        rest.parse().map_err(|_| self.err(format!("bad value for `{key}`")))
    }

    fn values<V: FromStr>(&mut self) -> Result<Vec<V>> {
        let l = self.next()?;
        l.split_ascii_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("bad value `{t}`"))))
            .collect()
    }
}
