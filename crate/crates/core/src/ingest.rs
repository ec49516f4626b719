//! Loaders for raw AIS position CSVs, POI tables and vessel-type tables.
//!
//! Bad rows are skipped and counted, never fatal: multi-million-row feeds
//! routinely carry a handful of garbled lines.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use csv::{ByteRecord, ReaderBuilder};
use log::warn;
use thiserror::Error;

use crate::geo::{haversine_m, GeoPoint};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(String),
}

fn csv_error(e: csv::Error) -> IngestError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            other => IngestError::Csv(format!("{other:?}")),
        }
    } else {
        IngestError::Csv(e.to_string())
    }
}

/// Opaque vessel identifier (usually an MMSI), kept as text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VesselId(pub String);

impl fmt::Display for VesselId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VesselId {
    fn from(s: &str) -> Self {
        VesselId(s.to_owned())
    }
}

impl From<u64> for VesselId {
    fn from(v: u64) -> Self {
        VesselId(v.to_string())
    }
}

/// One raw position report.
#[derive(Debug, Clone, PartialEq)]
pub struct AisRecord {
    pub vessel_id: VesselId,
    /// Unix seconds.
    pub timestamp: i64,
    pub pos: GeoPoint,
    pub vessel_type: Option<u32>,
}

/// Header names for the AIS columns. Defaults follow the Brest
/// `nari_dynamic` schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMapping {
    pub vessel_id: String,
    pub timestamp: String,
    pub lon: String,
    pub lat: String,
    pub vessel_type: Option<String>,
    /// Timestamps are milliseconds; divided by 1000 and truncated.
    pub timestamp_millis: bool,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            vessel_id: "sourcemmsi".into(),
            timestamp: "t".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            vessel_type: None,
            timestamp_millis: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_malformed: u64,
    pub rows_out_of_range: u64,
}

impl IngestStats {
    pub fn rows_valid(&self) -> u64 {
        self.rows_read - self.rows_malformed - self.rows_out_of_range
    }
}

struct ColumnIndex {
    id: usize,
    ts: usize,
    lon: usize,
    lat: usize,
    vtype: Option<usize>,
}

fn find_column(headers: &ByteRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| std::str::from_utf8(h).map(|s| s.trim() == name).unwrap_or(false))
        .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
}

enum RowOutcome {
    Valid(AisRecord),
    Malformed,
    OutOfRange,
}

/// Streaming AIS reader. Yields valid records in file order; the running
/// [`IngestStats`] are available at any point through [`AisReader::stats`].
pub struct AisReader<R: Read> {
    reader: csv::Reader<R>,
    cols: ColumnIndex,
    millis: bool,
    record: ByteRecord,
    stats: IngestStats,
}

impl<R: Read> AisReader<R> {
    pub fn new(source: R, mapping: &ColumnMapping) -> Result<Self, IngestError> {
        let mut reader = ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(source);
        let headers = reader.byte_headers().map_err(csv_error)?.clone();
        let cols = ColumnIndex {
            id: find_column(&headers, &mapping.vessel_id)?,
            ts: find_column(&headers, &mapping.timestamp)?,
            lon: find_column(&headers, &mapping.lon)?,
            lat: find_column(&headers, &mapping.lat)?,
            vtype: match &mapping.vessel_type {
                Some(name) => Some(find_column(&headers, name)?),
                None => None,
            },
        };
        Ok(AisReader {
            reader,
            cols,
            millis: mapping.timestamp_millis,
            record: ByteRecord::new(),
            stats: IngestStats::default(),
        })
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn decode(&self) -> RowOutcome {
        let field = |i: usize| -> Option<&str> {
            self.record
                .get(i)
                .and_then(|b| std::str::from_utf8(b).ok())
                .map(str::trim)
        };
        let (Some(id), Some(ts), Some(lon), Some(lat)) = (
            field(self.cols.id),
            field(self.cols.ts),
            field(self.cols.lon),
            field(self.cols.lat),
        ) else {
            return RowOutcome::Malformed;
        };
        if id.is_empty() {
            return RowOutcome::Malformed;
        }
        let Some(timestamp) = parse_timestamp(ts, self.millis) else {
            return RowOutcome::Malformed;
        };
        let (Ok(lon), Ok(lat)) = (lon.parse::<f64>(), lat.parse::<f64>()) else {
            return RowOutcome::Malformed;
        };
        if !lon.is_finite() || !lat.is_finite() {
            return RowOutcome::Malformed;
        }
        let vessel_type = match self.cols.vtype {
            None => None,
            Some(i) => match field(i) {
                None | Some("") => None,
                Some(s) => match s.parse::<u32>() {
                    Ok(v) => Some(v),
                    Err(_) => return RowOutcome::Malformed,
                },
            },
        };
        if timestamp < 0 {
            return RowOutcome::OutOfRange;
        }
        match GeoPoint::new(lon, lat) {
            Ok(pos) => RowOutcome::Valid(AisRecord {
                vessel_id: VesselId(id.to_owned()),
                timestamp,
                pos,
                vessel_type,
            }),
            Err(_) => RowOutcome::OutOfRange,
        }
    }
}

fn parse_timestamp(s: &str, millis: bool) -> Option<i64> {
    let raw = match s.parse::<i64>() {
        Ok(v) => v,
        // tolerate "1443650402.0"
        Err(_) => {
            let f = s.parse::<f64>().ok()?;
            if !f.is_finite() || f.fract() != 0.0 || f.abs() > 9.0e15 {
                return None;
            }
            f as i64
        }
    };
    Some(if millis { raw / 1000 } else { raw })
}

impl<R: Read> Iterator for AisReader<R> {
    type Item = Result<AisRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) if e.is_io_error() => return Some(Err(csv_error(e))),
                Err(_) => {
                    self.stats.rows_read += 1;
                    self.stats.rows_malformed += 1;
                    continue;
                }
            }
            self.stats.rows_read += 1;
            match self.decode() {
                RowOutcome::Valid(rec) => return Some(Ok(rec)),
                RowOutcome::Malformed => self.stats.rows_malformed += 1,
                RowOutcome::OutOfRange => self.stats.rows_out_of_range += 1,
            }
        }
    }
}

/// Reads a whole AIS CSV.
pub fn parse_ais_csv<R: Read>(
    source: R,
    mapping: &ColumnMapping,
) -> Result<(Vec<AisRecord>, IngestStats), IngestError> {
    let mut reader = AisReader::new(source, mapping)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((records, reader.stats()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub poi_id: u32,
    pub pos: GeoPoint,
    pub name: Option<String>,
}

/// POIs sorted by id, with brute-force nearest lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoiIndex {
    pois: Vec<Poi>,
}

impl PoiIndex {
    /// Later entries with an already-seen id replace earlier ones.
    pub fn new(pois: impl IntoIterator<Item = Poi>) -> Self {
        let mut by_id: BTreeMap<u32, Poi> = BTreeMap::new();
        for poi in pois {
            if by_id.insert(poi.poi_id, poi.clone()).is_some() {
                warn!("duplicate poi_id {}; keeping the later row", poi.poi_id);
            }
        }
        PoiIndex {
            pois: by_id.into_values().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn get(&self, poi_id: u32) -> Option<&Poi> {
        self.pois
            .binary_search_by_key(&poi_id, |p| p.poi_id)
            .ok()
            .map(|i| &self.pois[i])
    }

    /// Nearest POI and its distance in meters; ties go to the lowest id.
    pub fn nearest(&self, p: GeoPoint) -> Option<(&Poi, f64)> {
        let mut best: Option<(&Poi, f64)> = None;
        for poi in &self.pois {
            let d = haversine_m(p, poi.pos);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((poi, d));
            }
        }
        best
    }
}

/// Parses a `poi_id,lon,lat[,name]` table. Invalid rows are skipped with a
/// warning.
pub fn parse_poi_csv<R: Read>(source: R) -> Result<PoiIndex, IngestError> {
    let mut reader = ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.byte_headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Ok(PoiIndex::default());
    }
    let id_col = find_column(&headers, "poi_id")?;
    let lon_col = find_column(&headers, "lon")?;
    let lat_col = find_column(&headers, "lat")?;
    let name_col = find_column(&headers, "name").ok();

    let mut pois = Vec::new();
    let mut record = ByteRecord::new();
    let mut line = 1u64;
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(e) => {
                warn!("skipping unreadable POI row: {e}");
                continue;
            }
        }
        line += 1;
        let field = |i: usize| record.get(i).and_then(|b| std::str::from_utf8(b).ok()).map(str::trim);
        let parsed = (|| {
            let id = field(id_col)?.parse::<u32>().ok()?;
            let lon = field(lon_col)?.parse::<f64>().ok()?;
            let lat = field(lat_col)?.parse::<f64>().ok()?;
            let pos = GeoPoint::new(lon, lat).ok()?;
            let name = name_col
                .and_then(field)
                .filter(|s| !s.is_empty())
                .map(str::to_owned);
            Some(Poi { poi_id: id, pos, name })
        })();
        match parsed {
            Some(poi) => pois.push(poi),
            None => warn!("skipping invalid POI row at line {line}"),
        }
    }
    Ok(PoiIndex::new(pois))
}

/// Parses a `vessel_id,vessel_type` table.
pub fn parse_vessel_types<R: Read>(source: R) -> Result<HashMap<VesselId, u32>, IngestError> {
    let mut reader = ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.byte_headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Ok(HashMap::new());
    }
    let id_col = find_column(&headers, "vessel_id")?;
    let type_col = find_column(&headers, "vessel_type")?;
    let mut out = HashMap::new();
    let mut record = ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(_) => continue,
        }
        let field = |i: usize| record.get(i).and_then(|b| std::str::from_utf8(b).ok()).map(str::trim);
        match (field(id_col), field(type_col).and_then(|s| s.parse::<u32>().ok())) {
            (Some(id), Some(t)) if !id.is_empty() => {
                out.insert(VesselId(id.to_owned()), t);
            }
            _ => warn!("skipping invalid vessel-type row"),
        }
    }
    Ok(out)
}

/// Fills `vessel_type` from a side table for records that carry none.
pub fn apply_vessel_types(records: &mut [AisRecord], types: &HashMap<VesselId, u32>) {
    for rec in records.iter_mut().filter(|r| r.vessel_type.is_none()) {
        rec.vessel_type = types.get(&rec.vessel_id).copied();
    }
}

/// Partitions records by vessel; each list is stably sorted by timestamp.
pub fn group_by_vessel(
    records: impl IntoIterator<Item = AisRecord>,
) -> BTreeMap<VesselId, Vec<AisRecord>> {
    let mut groups: BTreeMap<VesselId, Vec<AisRecord>> = BTreeMap::new();
    for rec in records {
        match groups.get_mut(&rec.vessel_id) {
            Some(list) => list.push(rec),
            None => {
                groups.insert(rec.vessel_id.clone(), vec![rec]);
            }
        }
    }
    for list in groups.values_mut() {
        list.sort_by_key(|r| r.timestamp);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping {
            vessel_id: "id".into(),
            timestamp: "ts".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            vessel_type: None,
            timestamp_millis: false,
        }
    }

    #[test]
    fn parses_direct_mapping() {
        let data = "id,ts,lon,lat\n244,1443650402,-4.47,48.38\n";
        let (recs, stats) = parse_ais_csv(data.as_bytes(), &mapping()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].vessel_id, VesselId::from("244"));
        assert_eq!(recs[0].timestamp, 1443650402);
        assert_eq!(recs[0].pos, GeoPoint::new(-4.47, 48.38).unwrap());
        assert_eq!(stats.rows_read, 1);
        assert_eq!(stats.rows_valid(), 1);
    }

    #[test]
    fn counts_bad_rows() {
        let data = "id,ts,lon,lat\n1,10,0,91\n1,abc,0,0\n1,11,0,0\n1,12\n1,-5,0,0\n";
        let (recs, stats) = parse_ais_csv(data.as_bytes(), &mapping()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(stats.rows_read, 5);
        assert_eq!(stats.rows_out_of_range, 2);
        assert_eq!(stats.rows_malformed, 2);
        assert_eq!(stats.rows_valid(), recs.len() as u64);
    }

    #[test]
    fn missing_column_is_config_error() {
        let data = "id,time,lon,lat\n";
        assert!(matches!(
            parse_ais_csv(data.as_bytes(), &mapping()),
            Err(IngestError::MissingColumn(c)) if c == "ts"
        ));
    }

    #[test]
    fn millisecond_timestamps_truncate() {
        let mut m = mapping();
        m.timestamp_millis = true;
        let data = "id,ts,lon,lat\n1,1443650402999,1,2\n";
        let (recs, _) = parse_ais_csv(data.as_bytes(), &m).unwrap();
        assert_eq!(recs[0].timestamp, 1443650402);
    }

    #[test]
    fn brest_default_mapping_and_type_column() {
        let mut m = ColumnMapping::default();
        m.vessel_type = Some("shiptype".into());
        let data = "sourcemmsi,navigationalstatus,lon,lat,t,shiptype\n227,0,-4.4,48.3,1443650402,70\n228,0,-4.4,48.3,1443650403,\n";
        let (recs, _) = parse_ais_csv(data.as_bytes(), &m).unwrap();
        assert_eq!(recs[0].vessel_type, Some(70));
        assert_eq!(recs[1].vessel_type, None);
    }

    #[test]
    fn poi_table_cases() {
        let idx = parse_poi_csv("poi_id,lon,lat,name\n1,23.63,37.94,Piraeus\n".as_bytes()).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.get(1).unwrap().name.as_deref(), Some("Piraeus"));

        let empty = parse_poi_csv("poi_id,lon,lat,name\n".as_bytes()).unwrap();
        assert!(empty.is_empty());
        assert!(parse_poi_csv("".as_bytes()).unwrap().is_empty());

        let dup = parse_poi_csv("poi_id,lon,lat,name\n7,1,1,a\n7,2,2,b\n".as_bytes()).unwrap();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup.get(7).unwrap().pos, GeoPoint::new(2.0, 2.0).unwrap());
    }

    #[test]
    fn nearest_tie_goes_to_lowest_id() {
        let idx = PoiIndex::new(vec![
            Poi { poi_id: 9, pos: GeoPoint::new(0.01, 0.0).unwrap(), name: None },
            Poi { poi_id: 4, pos: GeoPoint::new(-0.01, 0.0).unwrap(), name: None },
        ]);
        let (poi, _) = idx.nearest(GeoPoint::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(poi.poi_id, 4);
        assert!(PoiIndex::default().nearest(GeoPoint::new(0.0, 0.0).unwrap()).is_none());
    }

    #[test]
    fn vessel_type_table() {
        let types = parse_vessel_types("vessel_id,vessel_type\n244,70\nbad,\n".as_bytes()).unwrap();
        assert_eq!(types.len(), 1);
        let mut recs = vec![AisRecord {
            vessel_id: "244".into(),
            timestamp: 0,
            pos: GeoPoint::new(0.0, 0.0).unwrap(),
            vessel_type: None,
        }];
        apply_vessel_types(&mut recs, &types);
        assert_eq!(recs[0].vessel_type, Some(70));
    }

    fn rec(id: &str, t: i64, lon: f64) -> AisRecord {
        AisRecord {
            vessel_id: id.into(),
            timestamp: t,
            pos: GeoPoint::new(lon, 0.0).unwrap(),
            vessel_type: None,
        }
    }

    #[test]
    fn grouping_is_stable() {
        let g = group_by_vessel(vec![
            rec("A", 5, 0.0),
            rec("B", 1, 0.0),
            rec("A", 2, 0.0),
            rec("A", 5, 1.0),
        ]);
        assert_eq!(g.len(), 2);
        let a: Vec<_> = g[&VesselId::from("A")].iter().map(|r| (r.timestamp, r.pos.lon())).collect();
        assert_eq!(a, vec![(2, 0.0), (5, 0.0), (5, 1.0)]);
        assert_eq!(g[&VesselId::from("B")].len(), 1);
    }

    proptest! {
        #[test]
        fn grouping_partitions_input(rows in prop::collection::vec((0u8..4, 0i64..50), 0..60)) {
            let input: Vec<_> = rows.iter().map(|&(v, t)| rec(&v.to_string(), t, 0.0)).collect();
            let g = group_by_vessel(input.clone());
            let total: usize = g.values().map(Vec::len).sum();
            prop_assert_eq!(total, input.len());
            for (id, list) in &g {
                prop_assert!(list.iter().all(|r| &r.vessel_id == id));
                prop_assert!(list.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
            }
        }

        #[test]
        fn nearest_matches_brute_force(
            pois in prop::collection::vec((0u32..50, -10.0f64..10.0, -10.0f64..10.0), 1..30),
            q in (-12.0f64..12.0, -12.0f64..12.0),
        ) {
            let idx = PoiIndex::new(pois.iter().map(|&(id, lon, lat)| Poi {
                poi_id: id, pos: GeoPoint::new(lon, lat).unwrap(), name: None,
            }));
            let qp = GeoPoint::new(q.0, q.1).unwrap();
            let (got, d) = idx.nearest(qp).unwrap();
            // brute force over the deduplicated (last-wins) set
            let mut last: BTreeMap<u32, GeoPoint> = BTreeMap::new();
            for &(id, lon, lat) in &pois {
                last.insert(id, GeoPoint::new(lon, lat).unwrap());
            }
            let best = last.iter()
                .map(|(&id, &p)| (haversine_m(qp, p), id))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            prop_assert_eq!(got.poi_id, best.1);
            prop_assert_eq!(d, best.0);
        }
    }
}
