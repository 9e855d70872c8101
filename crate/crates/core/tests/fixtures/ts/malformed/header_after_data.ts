@problemName Late
@classLabel true a b
@data
1,2,3:a
@seriesLength 3
1,2,3:b
