// JSON payload shapes of the record service API, field for field.

export type RunStatus = "RUNNING" | "COMPLETED" | "FAILED" | "INTERRUPTED";

export interface HostInfo {
  hostname: string;
  os_name: string;
  os_version: string;
  runtime_version: string;
  captured_at: string;
}

export interface ArtifactRef {
  name: string;
  kind: "INLINE" | "BLOB";
  size_bytes: number;
  content_hash: string;
  media_type: string;
  blob_uid?: string;
}

export interface RunRecord {
  run_id: number;
  experiment: { name: string };
  config: Record<string, unknown>;
  host: HostInfo;
  status: RunStatus;
  start_time: string;
  stop_time?: string;
  heartbeat: string;
  result?: unknown;
  captured_out: string;
  artifacts: ArtifactRef[];
  metric_names: string[];
  ingest_fingerprint?: string;
  sources?: [string, string][];
  stale: boolean;
}

export interface MetricSeries {
  run_id: number;
  name: string;
  steps: number[];
  values: number[];
  timestamps: string[];
}

export interface Annotation {
  annotation_id: number;
  run_id: number;
  author: string;
  created_at: string;
  tags: string[];
  note: string;
}

export interface RunListing {
  total: number;
  runs: RunRecord[];
}

export interface ExperimentSummary {
  name: string;
  run_count: number;
}
