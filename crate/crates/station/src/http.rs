//! JSON-over-HTTP API for the head end.

use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::station::{
    BillError, IngestError, MeterEntry, ReadingRecord, RegistryError, Station, TariffSchedule,
};

/// All mutations go through the write lock, so readers always see whole updates.
pub type SharedStation = Arc<RwLock<Station>>;

pub fn shared(station: Station) -> SharedStation {
    Arc::new(RwLock::new(station))
}

// A panic while holding the lock cannot leave the station half-updated:
// every mutation validates first and changes memory last.
pub fn read(s: &SharedStation) -> RwLockReadGuard<'_, Station> {
    s.read().unwrap_or_else(|e| e.into_inner())
}

pub fn write(s: &SharedStation) -> RwLockWriteGuard<'_, Station> {
    s.write().unwrap_or_else(|e| e.into_inner())
}

pub fn router(station: SharedStation) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/telegrams", post(post_telegram))
        .route("/meters", get(list_meters).post(register_meter))
        .route("/meters/{id}", get(get_meter))
        .route("/meters/{id}/readings", get(get_readings))
        .route("/meters/{id}/bill", get(get_bill))
        .route("/tariff", get(get_tariff).put(put_tariff))
        .route("/dead-letters", get(dead_letters))
        .with_state(station)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>, detail: impl ToString) -> Self {
        Self { status, body: json!({ "error": error.into(), "detail": detail.to_string() }) }
    }

    pub fn invalid_entry(meter_id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: json!({ "error": "invalid entry", "meter_id": meter_id }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad request", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
pub struct TelegramEnvelope {
    pub from_number: String,
    pub body: String,
    pub received_at_s: u64,
}

async fn post_telegram(
    State(st): State<SharedStation>,
    envelope: Result<Json<TelegramEnvelope>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(env) = envelope?;
    let result = write(&st).ingest_raw(&env.from_number, env.body.as_bytes(), env.received_at_s);
    match result {
        Ok(outcome) => Ok((StatusCode::ACCEPTED, Json(outcome)).into_response()),
        Err(IngestError::Rejected(r)) => Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(r)).into_response()),
        Err(IngestError::Storage(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e)),
    }
}

async fn list_meters(State(st): State<SharedStation>) -> Json<Vec<MeterEntry>> {
    Json(read(&st).meters().cloned().collect())
}

async fn register_meter(
    State(st): State<SharedStation>,
    entry: Result<Json<MeterEntry>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<MeterEntry>)> {
    let Json(entry) = entry?;
    match write(&st).register(entry.clone()) {
        Ok(()) => Ok((StatusCode::CREATED, Json(entry))),
        Err(e @ RegistryError::Duplicate(_)) => Err(ApiError::new(StatusCode::CONFLICT, "duplicate meter", e)),
        Err(e @ (RegistryError::InvalidId(_) | RegistryError::InvalidDest(_))) => {
            Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid meter", e))
        }
        Err(RegistryError::Storage(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e)),
    }
}

#[derive(Debug, Serialize)]
struct MeterView {
    #[serde(flatten)]
    entry: MeterEntry,
    latest: Option<ReadingRecord>,
}

async fn get_meter(State(st): State<SharedStation>, Path(id): Path<String>) -> ApiResult<Json<MeterView>> {
    let station = read(&st);
    let entry = station.lookup(&id).map_err(|_| ApiError::invalid_entry(&id))?.clone();
    let latest = station.latest(&id).cloned();
    Ok(Json(MeterView { entry, latest }))
}

#[derive(Debug, Deserialize)]
struct Period {
    from: Option<u64>,
    to: Option<u64>,
    with_extra: Option<bool>,
}

async fn get_readings(
    State(st): State<SharedStation>,
    Path(id): Path<String>,
    q: Result<Query<Period>, QueryRejection>,
) -> ApiResult<Json<Vec<ReadingRecord>>> {
    let Query(q) = q?;
    let station = read(&st);
    let rows = station
        .readings(&id, q.from.unwrap_or(0), q.to.unwrap_or(u64::MAX))
        .map_err(|_| ApiError::invalid_entry(&id))?;
    Ok(Json(rows.into_iter().cloned().collect()))
}

async fn get_bill(
    State(st): State<SharedStation>,
    Path(id): Path<String>,
    q: Result<Query<Period>, QueryRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let station = read(&st);
    let tariff = station.tariff();
    let to = q.to.unwrap_or(u64::MAX);
    let bill = station.compute_bill(&id, q.from.unwrap_or(0), to, &tariff).map_err(|e| match e {
        BillError::UnknownMeter(_) => ApiError::invalid_entry(&id),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no bill", other),
    })?;
    let with_extra = q.with_extra.unwrap_or(true);
    let amount = if with_extra { bill.amount_total } else { bill.amount_without_extra };
    let mut body = serde_json::to_value(&bill).expect("bill serializes");
    body["with_extra"] = json!(with_extra);
    body["amount"] = json!(amount);
    body["tariff"] = json!(tariff);
    Ok(Json(body))
}

async fn get_tariff(State(st): State<SharedStation>) -> Json<TariffSchedule> {
    Json(read(&st).tariff())
}

async fn put_tariff(
    State(st): State<SharedStation>,
    tariff: Result<Json<TariffSchedule>, JsonRejection>,
) -> ApiResult<Json<TariffSchedule>> {
    let Json(tariff) = tariff?;
    write(&st)
        .set_tariff(tariff)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid tariff", e))?;
    Ok(Json(tariff))
}

async fn dead_letters(State(st): State<SharedStation>) -> Json<serde_json::Value> {
    Json(json!(read(&st).dead_letters()))
}

