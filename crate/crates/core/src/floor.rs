//! Hallway geometry and the sensor / node / PIR / actuator topology.
//!
//! Coordinates: `x` runs across the hallway (`tiles_x` tiles), `y` runs along
//! it (`tiles_y` tiles). Tile `(ix, iy)` covers
//! `[ix*s, (ix+1)*s] x [iy*s, (iy+1)*s]`. Load sensors sit on the interior
//! grid points; boundary columns are uninstrumented supports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::ids::{ActuatorId, NodeId, PirId, SensorId, TileId};
use crate::radio::RadioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorConfig {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_side_m: f64,
    pub sensors_per_node: usize,
    pub pir_section_len_tiles: usize,
    pub seed: u64,
}

impl Default for FloorConfig {
    /// 5 x 31 tiles: 120 sensors on 30 nodes, 29 of them with a PIR.
    fn default() -> Self {
        FloorConfig {
            tiles_x: 5,
            tiles_y: 31,
            tile_side_m: 0.6,
            sensors_per_node: 4,
            pir_section_len_tiles: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FloorError {
    #[error("floor must be at least 2x2 tiles, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("tile side must be positive, got {0}")]
    BadTileSide(f64),
    #[error("sensors_per_node must be positive")]
    ZeroSensorsPerNode,
    #[error("pir_section_len_tiles must be positive")]
    ZeroPirSection,
    #[error("{sensors} interior columns cannot be split into groups of {per_node}")]
    Indivisible { sensors: usize, per_node: usize },
    #[error("unknown tile {0}")]
    UnknownTile(TileId),
    #[error("unknown sensor {0}")]
    UnknownSensor(SensorId),
}

impl FloorConfig {
    pub fn interior_columns(&self) -> usize {
        self.tiles_x.saturating_sub(1) * self.tiles_y.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), FloorError> {
        if self.tiles_x < 2 || self.tiles_y < 2 {
            return Err(FloorError::TooSmall(self.tiles_x, self.tiles_y));
        }
        if !(self.tile_side_m > 0.0 && self.tile_side_m.is_finite()) {
            return Err(FloorError::BadTileSide(self.tile_side_m));
        }
        if self.sensors_per_node == 0 {
            return Err(FloorError::ZeroSensorsPerNode);
        }
        if self.pir_section_len_tiles == 0 {
            return Err(FloorError::ZeroPirSection);
        }
        let sensors = self.interior_columns();
        if sensors % self.sensors_per_node != 0 {
            return Err(FloorError::Indivisible {
                sensors,
                per_node: self.sensors_per_node,
            });
        }
        Ok(())
    }

    pub fn width_m(&self) -> f64 {
        self.tiles_x as f64 * self.tile_side_m
    }

    pub fn length_m(&self) -> f64 {
        self.tiles_y as f64 * self.tile_side_m
    }
}

/// Corner of a tile. North is low `y`, west is low `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corner {
    NW,
    NE,
    SW,
    SE,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::NW, Corner::NE, Corner::SW, Corner::SE];

    /// Grid offset of this corner from the tile's NW grid point.
    pub fn offset(self) -> (usize, usize) {
        match self {
            Corner::NW => (0, 0),
            Corner::NE => (1, 0),
            Corner::SW => (0, 1),
            Corner::SE => (1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: SensorId,
    pub pos: Point,
    /// Grid column index (`x / tile_side`), 1..tiles_x-1.
    pub col: usize,
    /// Grid row index (`y / tile_side`), 1..tiles_y-1.
    pub row: usize,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub id: TileId,
    pub ix: usize,
    pub iy: usize,
    /// Indexed by `Corner as usize`; `None` for uninstrumented corners.
    pub corners: [Option<SensorId>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub sensors: Vec<SensorId>,
    pub pir: Option<PirId>,
    pub actuator: Option<ActuatorId>,
    /// Mean position of the owned sensors; used for radio range.
    pub centroid: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PirZone {
    pub id: PirId,
    pub node: NodeId,
    pub zone: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorTopology {
    pub config: FloorConfig,
    pub radio_radius_m: f64,
    pub sensors: Vec<Sensor>,
    pub tiles: Vec<Tile>,
    pub nodes: Vec<Node>,
    pub pirs: Vec<PirZone>,
    /// Sorted neighbor lists, indexed by node.
    pub neighbors: Vec<Vec<NodeId>>,
    grid: Vec<Option<SensorId>>,
}

pub fn build_floor(config: &FloorConfig, radio: &RadioConfig) -> Result<FloorTopology, FloorError> {
    config.validate()?;
    let (tx, ty, s) = (config.tiles_x, config.tiles_y, config.tile_side_m);
    let (nx, ny) = (tx - 1, ty - 1);

    // sensor ids are row-major over interior grid points
    let mut grid = vec![None; (tx + 1) * (ty + 1)];
    let mut sensors = Vec::with_capacity(nx * ny);
    for row in 1..ty {
        for col in 1..tx {
            let id = SensorId::from(sensors.len());
            grid[row * (tx + 1) + col] = Some(id);
            sensors.push(Sensor {
                id,
                pos: Point::new(col as f64 * s, row as f64 * s),
                col,
                row,
                node: NodeId(0),
            });
        }
    }

    let groups = group_sensors(nx, ny, config.sensors_per_node);
    let n_nodes = groups.len();
    let sections = ty.div_ceil(config.pir_section_len_tiles);
    // the highest-numbered node is the one without PIR and media board
    let n_pirs = sections.min(n_nodes.saturating_sub(1));

    let mut nodes = Vec::with_capacity(n_nodes);
    for (n, group) in groups.into_iter().enumerate() {
        let id = NodeId::from(n);
        let mut cx = 0.0;
        let mut cy = 0.0;
        let ids: Vec<SensorId> = group
            .into_iter()
            .map(|i| {
                sensors[i].node = id;
                cx += sensors[i].pos.x;
                cy += sensors[i].pos.y;
                sensors[i].id
            })
            .collect();
        let k = ids.len() as f64;
        nodes.push(Node {
            id,
            sensors: ids,
            pir: (n < n_pirs).then(|| PirId::from(n)),
            actuator: (n < n_pirs).then(|| ActuatorId::from(n)),
            centroid: Point::new(cx / k, cy / k),
        });
    }

    let sec = config.pir_section_len_tiles;
    let pirs = (0..n_pirs)
        .map(|k| PirZone {
            id: PirId::from(k),
            node: NodeId::from(k),
            zone: Rect::new(
                0.0,
                (k * sec) as f64 * s,
                config.width_m(),
                (((k + 1) * sec).min(ty)) as f64 * s,
            ),
        })
        .collect();

    let mut tiles = Vec::with_capacity(tx * ty);
    for iy in 0..ty {
        for ix in 0..tx {
            let mut corners = [None; 4];
            for c in Corner::ALL {
                let (dx, dy) = c.offset();
                corners[c as usize] = grid[(iy + dy) * (tx + 1) + ix + dx];
            }
            tiles.push(Tile {
                id: TileId::from(tiles.len()),
                ix,
                iy,
                corners,
            });
        }
    }

    let neighbors = nodes
        .iter()
        .map(|a| {
            nodes
                .iter()
                .filter(|b| b.id != a.id && a.centroid.dist(b.centroid) <= radio.radio_radius_m)
                .map(|b| b.id)
                .collect()
        })
        .collect();

    Ok(FloorTopology {
        config: config.clone(),
        radio_radius_m: radio.radio_radius_m,
        sensors,
        tiles,
        nodes,
        pirs,
        neighbors,
        grid,
    })
}

/// Splits the `nx x ny` interior grid into per-node groups of sensor indices.
///
/// Uses rectangular blocks (as square as possible) scanned along the hallway
/// when the block tiles the grid exactly, else consecutive row-major runs.
fn group_sensors(nx: usize, ny: usize, per_node: usize) -> Vec<Vec<usize>> {
    let block = (1..=per_node)
        .filter(|bw| per_node % bw == 0)
        .map(|bw| (bw, per_node / bw))
        .filter(|&(bw, bh)| nx % bw == 0 && ny % bh == 0)
        .min_by_key(|&(bw, bh)| (bw.abs_diff(bh), std::cmp::Reverse(bw)));

    match block {
        Some((bw, bh)) => {
            let mut groups = Vec::with_capacity(nx * ny / per_node);
            for by in 0..ny / bh {
                for bx in 0..nx / bw {
                    let mut g = Vec::with_capacity(per_node);
                    for dy in 0..bh {
                        for dx in 0..bw {
                            g.push((by * bh + dy) * nx + bx * bw + dx);
                        }
                    }
                    groups.push(g);
                }
            }
            groups
        }
        None => (0..nx * ny)
            .collect::<Vec<_>>()
            .chunks(per_node)
            .map(<[usize]>::to_vec)
            .collect(),
    }
}

impl FloorTopology {
    pub fn sensor(&self, id: SensorId) -> Result<&Sensor, FloorError> {
        self.sensors.get(id.index()).ok_or(FloorError::UnknownSensor(id))
    }

    pub fn tile(&self, id: TileId) -> Result<&Tile, FloorError> {
        self.tiles.get(id.index()).ok_or(FloorError::UnknownTile(id))
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn tile_at(&self, ix: usize, iy: usize) -> Option<TileId> {
        (ix < self.config.tiles_x && iy < self.config.tiles_y)
            .then(|| TileId::from(iy * self.config.tiles_x + ix))
    }

    /// Sensor on grid point `(col, row)`, if that column is instrumented.
    pub fn sensor_at(&self, col: usize, row: usize) -> Option<SensorId> {
        let w = self.config.tiles_x + 1;
        if col > self.config.tiles_x || row > self.config.tiles_y {
            return None;
        }
        self.grid[row * w + col]
    }

    /// Instrumented corners of a tile with their roles.
    pub fn sensors_of_tile(&self, tile: TileId) -> Result<Vec<(Corner, SensorId)>, FloorError> {
        let t = self.tile(tile)?;
        Ok(Corner::ALL
            .into_iter()
            .filter_map(|c| t.corners[c as usize].map(|s| (c, s)))
            .collect())
    }

    /// The four tiles resting on a sensor's column, ordered NW, NE, SW, SE
    /// relative to the column.
    pub fn tiles_of_sensor(&self, sensor: SensorId) -> Result<[TileId; 4], FloorError> {
        let s = self.sensor(sensor)?;
        let (c, r) = (s.col, s.row);
        let at = |ix, iy| self.tile_at(ix, iy).expect("interior column has four tiles");
        Ok([at(c - 1, r - 1), at(c, r - 1), at(c - 1, r), at(c, r)])
    }

    /// Tile containing `p` plus fractional coordinates inside it.
    ///
    /// Points on a shared edge belong to the tile with the larger index.
    pub fn locate(&self, p: Point) -> Option<(TileId, f64, f64)> {
        let cfg = &self.config;
        let s = cfg.tile_side_m;
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= cfg.width_m() && p.y <= cfg.length_m()) {
            return None;
        }
        let fx = p.x / s;
        let fy = p.y / s;
        let ix = (fx.floor() as usize).min(cfg.tiles_x - 1);
        let iy = (fy.floor() as usize).min(cfg.tiles_y - 1);
        let u = (fx - ix as f64).clamp(0.0, 1.0);
        let v = (fy - iy as f64).clamp(0.0, 1.0);
        Some((TileId::from(iy * cfg.tiles_x + ix), u, v))
    }

    pub fn pir_zone(&self, id: PirId) -> Option<&PirZone> {
        self.pirs.get(id.index())
    }

    /// PIR whose section contains `p`.
    pub fn pir_covering(&self, p: Point) -> Option<PirId> {
        self.pirs.iter().find(|z| z.zone.contains(p)).map(|z| z.id)
    }

    pub fn actuator_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.actuator.is_some()).count()
    }

    pub fn are_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors
            .get(a.index())
            .is_some_and(|ns| ns.binary_search(&b).is_ok())
    }

    /// Stable digest of the floor layout, independent of radio settings.
    pub fn layout_key(&self) -> String {
        let c = &self.config;
        format!(
            "{}x{}@{}mm/{}/{}",
            c.tiles_x,
            c.tiles_y,
            (c.tile_side_m * 1000.0).round() as i64,
            c.sensors_per_node,
            c.pir_section_len_tiles
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(tx: usize, ty: usize, spn: usize) -> FloorTopology {
        let cfg = FloorConfig {
            tiles_x: tx,
            tiles_y: ty,
            sensors_per_node: spn,
            ..FloorConfig::default()
        };
        build_floor(&cfg, &RadioConfig::default()).unwrap()
    }

    #[test]
    fn default_counts() {
        let t = build_floor(&FloorConfig::default(), &RadioConfig::default()).unwrap();
        assert_eq!(t.sensors.len(), 120);
        assert_eq!(t.nodes.len(), 30);
        assert_eq!(t.pirs.len(), 29);
        assert_eq!(t.actuator_count(), 29);
        let bare: Vec<_> = t
            .nodes
            .iter()
            .filter(|n| n.pir.is_none() && n.actuator.is_none())
            .collect();
        assert_eq!(bare.len(), 1);
        assert_eq!(bare[0].id, NodeId(29));
    }

    #[test]
    fn smallest_floors() {
        let t = build(2, 2, 1);
        assert_eq!(t.sensors.len(), 1);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.tiles_of_sensor(SensorId(0)).unwrap().len(), 4);

        let t = build(3, 3, 4);
        assert_eq!(t.sensors.len(), 4);
        assert_eq!(t.nodes.len(), 1);
        let center = t.tile_at(1, 1).unwrap();
        assert_eq!(t.sensors_of_tile(center).unwrap().len(), 4);
    }

    #[test]
    fn tile_corner_counts() {
        let t = build(5, 31, 4);
        assert_eq!(t.sensors_of_tile(t.tile_at(0, 0).unwrap()).unwrap().len(), 1);
        assert_eq!(t.sensors_of_tile(t.tile_at(4, 30).unwrap()).unwrap().len(), 1);
        // edge, not corner
        assert_eq!(t.sensors_of_tile(t.tile_at(0, 10).unwrap()).unwrap().len(), 2);
        assert_eq!(t.sensors_of_tile(t.tile_at(2, 0).unwrap()).unwrap().len(), 2);
        assert_eq!(t.sensors_of_tile(t.tile_at(2, 10).unwrap()).unwrap().len(), 4);
        // corner tile's only sensor is its SE corner
        assert_eq!(
            t.sensors_of_tile(t.tile_at(0, 0).unwrap()).unwrap()[0].0,
            Corner::SE
        );
    }

    #[test]
    fn unknown_ids_are_errors() {
        let t = build(3, 3, 4);
        assert_eq!(
            t.sensors_of_tile(TileId(99)),
            Err(FloorError::UnknownTile(TileId(99)))
        );
        assert_eq!(
            t.tiles_of_sensor(SensorId(4)),
            Err(FloorError::UnknownSensor(SensorId(4)))
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = FloorConfig::default();
        c.tiles_x = 1;
        assert!(build_floor(&c, &RadioConfig::default()).is_err());
        let mut c = FloorConfig::default();
        c.sensors_per_node = 7;
        assert!(matches!(
            build_floor(&c, &RadioConfig::default()),
            Err(FloorError::Indivisible { .. })
        ));
        let mut c = FloorConfig::default();
        c.tile_side_m = 0.0;
        assert!(build_floor(&c, &RadioConfig::default()).is_err());
    }

    #[test]
    fn default_nodes_are_two_by_two_blocks() {
        let t = build(5, 31, 4);
        for n in &t.nodes {
            let cols: Vec<_> = n.sensors.iter().map(|s| t.sensors[s.index()].col).collect();
            let rows: Vec<_> = n.sensors.iter().map(|s| t.sensors[s.index()].row).collect();
            assert_eq!(cols.iter().max().unwrap() - cols.iter().min().unwrap(), 1);
            assert_eq!(rows.iter().max().unwrap() - rows.iter().min().unwrap(), 1);
        }
        // scanning along the hallway: node 0 and 1 share the first block row
        assert_eq!(t.nodes[0].centroid.y, t.nodes[1].centroid.y);
        assert!(t.nodes[2].centroid.y > t.nodes[0].centroid.y);
    }

    #[test]
    fn every_valid_layout_partitions_sensors() {
        for tx in 2..9 {
            for ty in 2..12 {
                for spn in 1..10 {
                    let cfg = FloorConfig {
                        tiles_x: tx,
                        tiles_y: ty,
                        sensors_per_node: spn,
                        ..FloorConfig::default()
                    };
                    let Ok(t) = build_floor(&cfg, &RadioConfig::default()) else {
                        continue;
                    };
                    let mut owner = vec![None; t.sensors.len()];
                    for n in &t.nodes {
                        assert_eq!(n.sensors.len(), spn);
                        for s in &n.sensors {
                            assert!(owner[s.index()].replace(n.id).is_none());
                            assert_eq!(t.sensors[s.index()].node, n.id);
                        }
                    }
                    assert!(owner.iter().all(Option::is_some));
                }
            }
        }
    }

    #[test]
    fn neighbor_graph_is_symmetric_and_connected() {
        let t = build(5, 31, 4);
        for (a, ns) in t.neighbors.iter().enumerate() {
            assert!(!ns.is_empty());
            for b in ns {
                assert!(t.are_neighbors(*b, NodeId::from(a)));
            }
        }
        let mut seen = vec![false; t.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(t.neighbors[n].iter().map(|m| m.index()));
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn locate_ties_go_to_larger_tile() {
        let t = build(5, 31, 4);
        let (tile, u, v) = t.locate(Point::new(1.2, 3.0)).unwrap();
        assert_eq!(t.tiles[tile.index()].ix, 2);
        assert_eq!(t.tiles[tile.index()].iy, 5);
        assert!(u.abs() < 1e-9);
        assert!(v.abs() < 1e-9);
        // far edge of the floor clamps to the last tile
        let (tile, u, _) = t.locate(Point::new(3.0, 1.0)).unwrap();
        assert_eq!(t.tiles[tile.index()].ix, 4);
        assert!((u - 1.0).abs() < 1e-9);
        assert!(t.locate(Point::new(-0.01, 1.0)).is_none());
        assert!(t.locate(Point::new(1.0, 18.61)).is_none());
    }

    #[test]
    fn pir_zones_partition_the_covered_length() {
        let t = build(5, 31, 4);
        for w in t.pirs.windows(2) {
            assert_eq!(w[0].zone.max.y, w[1].zone.min.y);
        }
        assert_eq!(t.pirs[0].zone.min.y, 0.0);
        assert_eq!(t.pir_covering(Point::new(1.5, 0.3)), Some(PirId(0)));
        // last two tiles are behind the diverging corridor, unwatched
        assert_eq!(t.pir_covering(Point::new(1.5, 18.3)), None);
    }
}
