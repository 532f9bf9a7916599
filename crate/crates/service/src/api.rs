//! HTTP/JSON interface.
//!
//! Mutations of one project run one at a time in arrival order (the
//! per-project lock is fair); reads share the lock. Compute runs on the
//! blocking pool while the guard is held.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coroplaq_core::dual_energy::DeThresholds;
use coroplaq_core::geom::Vec3;
use coroplaq_core::perivascular::RoiWidth;
use coroplaq_core::reformat::{cross_section, StraightenedVolume, DEFAULT_EXTENT, DEFAULT_SPACING};
use coroplaq_core::wall::{
    raw_outer_radii, segment_outer_wall, EditConstraint, OuterParams, WallKind, WallSurface, DEFAULT_THRESHOLD,
};
use coroplaq_core::CenterlineEdit;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

use crate::error::{ErrorBody, Result, ServiceError};
use crate::persist::{load_project, save_project, PROJECT_SUFFIX};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::project::{CropBox, Project};
use crate::session::{Command, Session};

/// Largest section image side accepted, in pixels.
const MAX_SECTION_SIZE: f64 = 2048.0;

type Handle = Arc<RwLock<Session>>;

/// Project store shared by all connections.
pub struct AppState {
    projects: Mutex<BTreeMap<String, Handle>>,
    data_dir: Option<PathBuf>,
    base_dir: Option<PathBuf>,
}

impl AppState {
    /// In-memory store; relative volume paths resolve against `base_dir`.
    pub fn new(base_dir: Option<PathBuf>) -> Self {
        AppState {
            projects: Mutex::new(BTreeMap::new()),
            data_dir: None,
            base_dir,
        }
    }

    /// Store backed by `dir`: existing project files are loaded and every
    /// mutation is written back.
    pub fn with_data_dir(dir: impl Into<PathBuf>, base_dir: Option<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut projects = BTreeMap::new();
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(PROJECT_SUFFIX))
            .collect();
        names.sort();
        for path in names {
            let p = load_project(&path)?;
            log::info!("loaded project {} from {}", p.id, path.display());
            let s = Session::open(p, base_dir.clone())?;
            projects.insert(s.project().id.clone(), Arc::new(RwLock::new(s)));
        }
        Ok(AppState {
            projects: Mutex::new(projects),
            data_dir: Some(dir),
            base_dir,
        })
    }

    fn get(&self, id: &str) -> Result<Handle> {
        self.projects
            .lock()
            .expect("project map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found("project", id))
    }

    fn persist(&self, p: &Project) -> Result<()> {
        if let Some(d) = &self.data_dir {
            save_project(p, d.join(format!("{}{PROJECT_SUFFIX}", p.id)))?;
        }
        Ok(())
    }
}

pub type Shared = Arc<AppState>;

/// Error response: status from the code, `{"error": {...}}` body.
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody::from(&self.0);
        let status = StatusCode::from_u16(body.code.status()).unwrap_or(StatusCode::UNPROCESSABLE_ENTITY);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

fn query<T>(q: std::result::Result<Query<T>, QueryRejection>) -> Result<T> {
    q.map(|Query(t)| t).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| std::panic::resume_unwind(e.into_panic()))
}

/// The centerline named in a request, or the only one.
fn pick_centerline(p: &Project, id: Option<String>) -> Result<String> {
    match id {
        Some(id) => Ok(p.centerline(&id).map(|_| id)?),
        None if p.centerlines.len() == 1 => Ok(p.centerlines.keys().next().expect("one").clone()),
        None => Err(ServiceError::BadRequest(format!(
            "centerline_id is required when the project has {} centerlines",
            p.centerlines.len()
        ))),
    }
}

/// JSON view of an entity by id.
fn entity_json(p: &Project, id: &str) -> Value {
    let v = if let Some(c) = p.centerlines.get(id) {
        serde_json::to_value(c)
    } else if let Some(s) = p.surfaces.get(id) {
        serde_json::to_value(s)
    } else if let Some(l) = p.lesions.get(id) {
        serde_json::to_value(l)
    } else if let Some(f) = p.fat_rois.get(id) {
        serde_json::to_value(f)
    } else {
        match id {
            "volume" => serde_json::to_value(&p.volume),
            "high_kv" => Ok(json!({ "high_kv": p.high_kv, "registration": p.registration })),
            "mask" => Ok(json!({ "crop": p.crop, "mask": p.mask })),
            "seeds" => serde_json::to_value(&p.seeds),
            "thresholds" => Ok(json!({
                "thresholds": p.thresholds,
                "de_thresholds": p.de_thresholds,
                "lap_volume_threshold": p.lap_volume_threshold,
            })),
            _ => Ok(Value::Null),
        }
    };
    v.unwrap_or(Value::Null)
}

/// Run the command built by `make` under the project's write lock.
async fn mutate(
    st: Shared,
    id: String,
    make: impl FnOnce(&Project) -> Result<Command> + Send + 'static,
) -> ApiResult<Json<Value>> {
    let handle = st.get(&id)?;
    let mut guard = handle.write_owned().await;
    let out = blocking(move || {
        let cmd = make(guard.project())?;
        let applied = guard.apply(cmd)?;
        st.persist(guard.project())?;
        let p = guard.project();
        let data: serde_json::Map<String, Value> =
            applied.entities.iter().map(|e| (e.clone(), entity_json(p, e))).collect();
        Ok(json!({
            "event": p.events.last().map(|e| e.timestamp),
            "applied": applied,
            "data": data,
        }))
    })
    .await?;
    Ok(Json(out))
}

/// Run `f` on the project under a shared lock.
async fn read<T: Send + 'static>(
    st: &Shared,
    id: &str,
    f: impl FnOnce(&Session) -> Result<T> + Send + 'static,
) -> ApiResult<T> {
    let handle = st.get(id)?;
    let guard = handle.read_owned().await;
    Ok(blocking(move || f(&guard)).await?)
}

#[derive(Deserialize)]
struct NewProject {
    #[serde(default)]
    id: Option<String>,
}

async fn create_project(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewProject = parse(&body)?;
    let mut map = st.projects.lock().expect("project map poisoned");
    let id = match req.id {
        Some(id) => id,
        None => (1..).map(|n| format!("p{n}")).find(|k| !map.contains_key(k)).expect("unbounded"),
    };
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ServiceError::BadRequest(format!("project id {id:?} must be non-empty [A-Za-z0-9_-]")).into());
    }
    if map.contains_key(&id) {
        return Err(ServiceError::AlreadyExists(id).into());
    }
    let mut s = Session::new(id.clone());
    if let Some(d) = &st.base_dir {
        s = s.with_base_dir(d);
    }
    st.persist(s.project())?;
    let body = serde_json::to_value(s.project()).map_err(ServiceError::from)?;
    map.insert(id, Arc::new(RwLock::new(s)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn list_projects(State(st): State<Shared>) -> Json<Vec<String>> {
    Json(st.projects.lock().expect("project map poisoned").keys().cloned().collect())
}

async fn get_project(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    read(&st, &id, |s| Ok(Json(serde_json::to_value(s.project())?))).await
}

async fn get_events(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    read(&st, &id, |s| Ok(Json(serde_json::to_value(&s.project().events)?))).await
}

#[derive(Deserialize)]
struct PathBody {
    path: String,
}

async fn register_volume(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: PathBody = parse(&body)?;
    mutate(st, id, move |_| Ok(Command::RegisterVolume { path: b.path })).await
}

async fn register_depair(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: PathBody = parse(&body)?;
    mutate(st, id, move |_| Ok(Command::RegisterDePair { path: b.path })).await
}

#[derive(Deserialize)]
struct CropBody {
    #[serde(default)]
    crop: Option<CropBox>,
}

async fn set_crop(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: CropBody = parse(&body)?;
    mutate(st, id, move |_| Ok(Command::IsolateHeart { crop: b.crop })).await
}

#[derive(Deserialize)]
struct SeedsBody {
    seeds: Vec<Vec3>,
}

async fn set_seeds(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: SeedsBody = parse(&body)?;
    mutate(st, id, move |_| Ok(Command::SetSeeds { seeds: b.seeds })).await
}

#[derive(Deserialize)]
struct ExtractBody {
    #[serde(default)]
    seeds: Option<Vec<Vec3>>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    target: Option<String>,
}

async fn extract(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: ExtractBody = parse(&body)?;
    mutate(st, id, move |_| {
        Ok(Command::ExtractCenterline {
            seeds: b.seeds,
            label: b.label,
            target: b.target,
        })
    })
    .await
}

#[derive(Deserialize)]
struct PatchCenterline {
    #[serde(default)]
    edit: Option<CenterlineEdit>,
    /// An empty label clears it.
    #[serde(default)]
    label: Option<String>,
}

async fn patch_centerline(
    State(st): State<Shared>,
    Path((id, cid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let b: PatchCenterline = parse(&body)?;
    let cmd = match (b.edit, b.label) {
        (Some(edit), None) => Command::EditCenterline {
            centerline_id: cid,
            edit,
        },
        (None, Some(label)) => Command::LabelCenterline {
            centerline_id: cid,
            label: (!label.is_empty()).then_some(label),
        },
        _ => return Err(ServiceError::BadRequest("give exactly one of edit or label".into()).into()),
    };
    mutate(st, id, move |_| Ok(cmd)).await
}

#[derive(Deserialize)]
struct MarkersBody {
    #[serde(default)]
    centerline_id: Option<String>,
    proximal_s: f64,
    distal_s: f64,
}

async fn set_markers(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: MarkersBody = parse(&body)?;
    mutate(st, id, move |p| {
        Ok(Command::SetMarkers {
            centerline_id: pick_centerline(p, b.centerline_id)?,
            proximal_s: b.proximal_s,
            distal_s: b.distal_s,
        })
    })
    .await
}

#[derive(Deserialize)]
struct SegmentBody {
    #[serde(default)]
    centerline_id: Option<String>,
    #[serde(default)]
    threshold: Option<f64>,
}

async fn segment_inner(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: SegmentBody = parse(&body)?;
    mutate(st, id, move |p| {
        Ok(Command::SegmentInner {
            centerline_id: pick_centerline(p, b.centerline_id)?,
        })
    })
    .await
}

async fn segment_outer(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: SegmentBody = parse(&body)?;
    mutate(st, id, move |p| {
        Ok(Command::SegmentOuter {
            centerline_id: pick_centerline(p, b.centerline_id)?,
            threshold: b.threshold,
        })
    })
    .await
}

/// Split `name:action` path segments.
fn action_segment<'a>(seg: &'a str, action: &str) -> Result<&'a str> {
    match seg.split_once(':') {
        Some((name, a)) if a == action && !name.is_empty() => Ok(name),
        _ => Err(ServiceError::not_found("route", seg)),
    }
}

#[derive(Deserialize)]
struct CorrectBody {
    constraints: Vec<EditConstraint>,
}

async fn correct_surface(
    State(st): State<Shared>,
    Path((id, seg)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let sid = action_segment(&seg, "correct")?.to_string();
    let b: CorrectBody = parse(&body)?;
    mutate(st, id, move |_| {
        Ok(Command::CorrectSurface {
            surface_id: sid,
            constraints: b.constraints,
        })
    })
    .await
}

#[derive(Deserialize)]
struct ThresholdsBody {
    t_lipid_fib: f64,
    t_fib_calc: f64,
    #[serde(default)]
    de: Option<DeThresholds>,
    #[serde(default)]
    lap_volume_threshold: Option<f64>,
}

async fn set_thresholds(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: ThresholdsBody = parse(&body)?;
    mutate(st, id, move |_| {
        Ok(Command::SetThresholds {
            t_lipid_fib: b.t_lipid_fib,
            t_fib_calc: b.t_fib_calc,
            de: b.de,
            lap_volume_threshold: b.lap_volume_threshold,
        })
    })
    .await
}

#[derive(Deserialize)]
struct LesionBody {
    #[serde(default)]
    centerline_id: Option<String>,
    #[serde(default)]
    proximal_s: Option<f64>,
    #[serde(default)]
    distal_s: Option<f64>,
}

async fn create_lesion(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: LesionBody = parse(&body)?;
    mutate(st, id, move |p| {
        Ok(Command::CreateLesion {
            centerline_id: pick_centerline(p, b.centerline_id)?,
            proximal_s: b.proximal_s,
            distal_s: b.distal_s,
        })
    })
    .await
}

#[derive(Deserialize)]
struct NapkinBody {
    napkin_ring: bool,
}

async fn patch_lesion(
    State(st): State<Shared>,
    Path((id, lid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let b: NapkinBody = parse(&body)?;
    mutate(st, id, move |_| {
        Ok(Command::SetNapkinRing {
            lesion_id: lid,
            napkin_ring: b.napkin_ring,
        })
    })
    .await
}

async fn recompute_lesion(State(st): State<Shared>, Path((id, seg)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let lid = action_segment(&seg, "recompute")?.to_string();
    mutate(st, id, move |_| Ok(Command::RecomputeLesion { lesion_id: lid })).await
}

async fn lesion_report(State(st): State<Shared>, Path((id, lid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    read(&st, &id, move |s| {
        let l = s.project().lesion(&lid)?;
        Ok(Json(json!({
            "lesion_id": lid,
            "stale": l.stale,
            "napkin_ring": l.napkin_ring,
            "report": l.report,
            "de": l.de,
        })))
    })
    .await
}

async fn lesion_histogram(State(st): State<Shared>, Path((id, lid)): Path<(String, String)>) -> ApiResult<Response> {
    read(&st, &id, move |s| {
        let l = s.project().lesion(&lid)?;
        let csv = l.report.histogram.to_csv(l.report.voxel_volume_mm3)?;
        let stale = if l.stale { "true" } else { "false" };
        Ok((
            [(header::CONTENT_TYPE, "text/csv"), (header::HeaderName::from_static("x-coroplaq-stale"), stale)],
            csv,
        )
            .into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum FatRoiBody {
    Manual {
        #[serde(default)]
        centerline_id: Option<String>,
        #[serde(default = "outer_wall")]
        base: WallKind,
        /// Radial width; absent means twice the local mean wall radius.
        #[serde(default)]
        width_mm: Option<f64>,
        start_s: f64,
        end_s: f64,
    },
    Auto,
}

fn outer_wall() -> WallKind {
    WallKind::Outer
}

async fn create_fat_roi(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: FatRoiBody = parse(&body)?;
    mutate(st, id, move |p| {
        Ok(match b {
            FatRoiBody::Manual {
                centerline_id,
                base,
                width_mm,
                start_s,
                end_s,
            } => Command::CreateFatRoi {
                centerline_id: pick_centerline(p, centerline_id)?,
                base,
                width: width_mm.map_or(RoiWidth::Auto, |mm| RoiWidth::Manual { mm }),
                start_s,
                end_s,
            },
            FatRoiBody::Auto => Command::AutoFatRois,
        })
    })
    .await
}

async fn recompute_fat_roi(State(st): State<Shared>, Path((id, seg)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let fid = action_segment(&seg, "recompute")?.to_string();
    mutate(st, id, move |_| Ok(Command::RecomputeFatRoi { roi_id: fid })).await
}

async fn fat_roi_stats(State(st): State<Shared>, Path((id, fid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    read(&st, &id, move |s| {
        let f = s.project().fat_roi(&fid)?;
        Ok(Json(json!({
            "roi_id": fid,
            "stale": f.stale,
            "centerline_id": f.centerline_id,
            "branch_label": f.branch_label,
            "start_s": f.start_s,
            "end_s": f.end_s,
            "stats": f.stats,
            "warnings": f.warnings,
        })))
    })
    .await
}

#[derive(Deserialize)]
struct SectionQuery {
    #[serde(default)]
    centerline_id: Option<String>,
    s: f64,
    #[serde(default)]
    extent: Option<f64>,
    #[serde(default)]
    spacing: Option<f64>,
}

fn section_grid(extent: Option<f64>, spacing: Option<f64>) -> Result<(f64, f64)> {
    let (e, sp) = (extent.unwrap_or(DEFAULT_EXTENT), spacing.unwrap_or(DEFAULT_SPACING));
    if !(sp > 0.0 && e > 0.0 && e / sp <= MAX_SECTION_SIZE) {
        return Err(ServiceError::BadRequest(format!(
            "extent {e} / spacing {sp} must be positive and at most {MAX_SECTION_SIZE} pixels"
        )));
    }
    Ok((e, sp))
}

async fn section(
    State(st): State<Shared>,
    Path(id): Path<String>,
    q: std::result::Result<Query<SectionQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let (extent, spacing) = section_grid(q.extent, q.spacing)?;
    read(&st, &id, move |s| {
        let cid = pick_centerline(s.project(), q.centerline_id)?;
        let c = &s.project().centerline(&cid)?.centerline;
        let cs = cross_section(s.volume()?, c, q.s, extent, spacing)?;
        Ok(([(header::CONTENT_TYPE, "application/octet-stream")], cs.to_payload()).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct PreviewQuery {
    #[serde(default)]
    centerline_id: Option<String>,
    s: f64,
    #[serde(default)]
    threshold: Option<f64>,
}

/// Outer contour of the one section nearest `s` at a trial threshold.
async fn outer_preview(
    State(st): State<Shared>,
    Path(id): Path<String>,
    q: std::result::Result<Query<PreviewQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    read(&st, &id, move |s| {
        let p = s.project();
        let cid = pick_centerline(p, q.centerline_id)?;
        let (_, inner) = p.fresh_surface(&cid, WallKind::Inner)?;
        let inner = &inner.surface;
        let (lo, hi) = inner.s_range();
        if !(q.s >= lo - 1e-9 && q.s <= hi + 1e-9) {
            return Err(coroplaq_core::Error::ArclengthOutOfRange { s: q.s, total: hi }.into());
        }
        let k = inner.nearest_section(q.s);
        let c = &p.centerline(&cid)?.centerline;
        let params = OuterParams {
            threshold: q.threshold.unwrap_or(DEFAULT_THRESHOLD),
            ..OuterParams::default()
        };
        let sv = StraightenedVolume {
            step_s: inner.step_s,
            sections: vec![cross_section(s.volume()?, c, inner.section_s[k], DEFAULT_EXTENT, DEFAULT_SPACING)?],
        };
        let one = WallSurface {
            radii: vec![inner.radii[k].clone()],
            section_s: vec![inner.section_s[k]],
            ..inner.clone()
        };
        let raw = raw_outer_radii(&sv, &one, &params)?;
        let outer = segment_outer_wall(&sv, &one, &params)?;
        Ok(Json(json!({
            "centerline_id": cid,
            "s": inner.section_s[k],
            "threshold": params.threshold,
            "inner": one.radii[0],
            "outer": outer.radii[0],
            "raw": raw.radii[0],
        })))
    })
    .await
}

async fn run(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let config: PipelineConfig = parse(&body)?;
    let handle = st.get(&id)?;
    let mut guard = handle.write_owned().await;
    let out = blocking(move || {
        let r = run_pipeline(&mut guard, &config);
        // earlier steps may have succeeded; keep what was applied
        st.persist(guard.project())?;
        Ok(serde_json::to_value(r?)?)
    })
    .await?;
    Ok(Json(out))
}

async fn fallback() -> ApiError {
    ApiError(ServiceError::not_found("route", "requested"))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/events", get(get_events))
        .route("/projects/{id}/volumes", post(register_volume))
        .route("/projects/{id}/depair", post(register_depair))
        .route("/projects/{id}/crop", axum::routing::put(set_crop))
        .route("/projects/{id}/seeds", axum::routing::put(set_seeds))
        .route("/projects/{id}/centerlines:extract", post(extract))
        .route("/projects/{id}/centerlines/{cid}", axum::routing::patch(patch_centerline))
        .route("/projects/{id}/markers", axum::routing::put(set_markers))
        .route("/projects/{id}/segment:inner", post(segment_inner))
        .route("/projects/{id}/segment:outer", post(segment_outer))
        .route("/projects/{id}/surfaces/{seg}", post(correct_surface))
        .route("/projects/{id}/thresholds", axum::routing::put(set_thresholds))
        .route("/projects/{id}/lesions", post(create_lesion))
        .route("/projects/{id}/lesions/{lid}", axum::routing::patch(patch_lesion).post(recompute_lesion))
        .route("/projects/{id}/lesions/{lid}/report", get(lesion_report))
        .route("/projects/{id}/lesions/{lid}/histogram.csv", get(lesion_histogram))
        .route("/projects/{id}/fatrois", post(create_fat_roi))
        .route("/projects/{id}/fatrois/{fid}", post(recompute_fat_roi))
        .route("/projects/{id}/fatrois/{fid}/stats", get(fat_roi_stats))
        .route("/projects/{id}/sections", get(section))
        .route("/projects/{id}/outer_preview", get(outer_preview))
        .route("/projects/{id}/run", post(run))
        .fallback(fallback)
        .with_state(state)
}

/// Serve on `addr` until the process ends.
pub async fn serve(state: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
