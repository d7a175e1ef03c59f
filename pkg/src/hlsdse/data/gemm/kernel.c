void gemm(float C[64][64], const float A[64][64], const float B[64][64])
{
#pragma ACCEL PIPELINE auto{PIPE_I}
#pragma ACCEL TILE FACTOR=auto{TILE_I}
  for (int i = 0; i < 64; i++) {
#pragma ACCEL PIPELINE auto{PIPE_J}
#pragma ACCEL PARALLEL FACTOR=auto{PF_J}
    for (int j = 0; j < 64; j++) {
      float acc = C[i][j];
#pragma ACCEL PARALLEL FACTOR=auto{PF_K}
      for (int k = 0; k < 64; k++) {
        acc += A[i][k] * B[k][j];
      }
      C[i][j] = acc;
    }
  }
}
